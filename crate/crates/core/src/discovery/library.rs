//! The offline model library: a fixed list of SDE families with starting
//! values sized for prices around 100.

use crate::calib::default_init;
use crate::dsl::{parse_model, SdeModel, Suggestion};
use crate::params::ParamVector;

/// `(name, model, θ⁰)`. Parameters missing from θ⁰ come from
/// [`default_init`], which puts levels at the historical mean.
pub const LIBRARY: &[(&str, &str, &str)] = &[
    ("gbm", "dS = a*S dt + b*S dW", "a=0.1,b=0.3"),
    ("cir", "dS = a*(b - S) dt + c*sqrt(S) dW", "a=1,c=3"),
    ("cev", "dS = a*S dt + b*S^c dW", "a=0.1,b=0.3,c=1"),
    ("jump-diffusion", "dS = a*S dt + b*S dW + S dJ", "a=0.1,b=0.3,lambda=10,mu_j=0,sigma_j=0.05"),
    ("ou", "dS = a*(b - S) dt + c dW", "a=1,c=20"),
    ("gompertz", "dS = a*S*(b - log(S)) dt + c*S dW", "a=1,b=4.6,c=0.3"),
    ("logistic", "dS = a*S*(1 - S/b) dt + c*S dW", "a=0.5,c=0.3"),
    ("mean-reverting-gbm", "dS = a*(b - S) dt + c*S dW", "a=1,c=0.3"),
    ("sqrt-vol", "dS = a*S dt + b*sqrt(S) dW", "a=0.1,b=3"),
    ("arithmetic", "dS = a dt + b dW", "a=5,b=20"),
    ("tanh-drift", "dS = a*tanh(S/b) dt + c*S dW", "a=5,c=0.3"),
    ("sine-drift", "dS = a*sin(S/b) dt + c*S dW", "a=5,c=0.3"),
    ("arctan-drift", "dS = a*arctan(S/b) dt + c*S dW", "a=5,c=0.3"),
    ("time-vol", "dS = a*S dt + b*S*(1 + c*t) dW", "a=0.1,b=0.3,c=0.1"),
    ("time-drift", "dS = (a + b*t)*S dt + c*S dW", "a=0.1,b=0.1,c=0.3"),
    ("jump-ou", "dS = a*(b - S) dt + c*S dW + S dJ", "a=1,c=0.3,lambda=10,mu_j=0,sigma_j=0.05"),
    ("saturating", "dS = a*(1 - exp(-S/b)) dt + c*sqrt(S) dW", "a=5,c=3"),
    ("rational-vol", "dS = a*S dt + b*S/(1 + c*S) dW", "a=0.1,b=0.3,c=0.001"),
    ("log-vol", "dS = a*S dt + b*S*log(S) dW", "a=0.1,b=0.06"),
    ("cubic-root-vol", "dS = a*(b - S) dt + c*S^0.333 dW", "a=1,c=5"),
];

/// Names in a fixed small pool mirroring the classic benchmark families.
pub const BENCHMARK_POOL: &[&str] = &["gbm", "cir", "cev", "jump-diffusion"];

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryEntry {
    pub name: &'static str,
    pub model: SdeModel,
    pub init: ParamVector,
}

impl LibraryEntry {
    /// θ⁰ completed for `historical`.
    pub fn init_for(&self, historical: &[f64]) -> ParamVector {
        complete_init(&self.model, Some(&self.init), historical)
    }

    pub fn suggestion(&self) -> Suggestion {
        Suggestion { model: self.model.clone(), init: Some(self.init.clone()) }
    }
}

/// `init` with every missing model parameter filled from [`default_init`].
pub fn complete_init(model: &SdeModel, init: Option<&ParamVector>, historical: &[f64]) -> ParamVector {
    let mut p = default_init(model, historical);
    if let Some(init) = init {
        for (k, v) in init.iter() {
            if p.contains(k) {
                p.set(k, v);
            }
        }
    }
    p
}

pub fn library() -> Vec<LibraryEntry> {
    LIBRARY
        .iter()
        .map(|(name, text, init)| LibraryEntry {
            name,
            model: parse_model(text).expect("library model parses"),
            init: init.parse().expect("library init parses"),
        })
        .collect()
}

/// Library entries with the given names, in the order given.
pub fn library_subset(names: &[&str]) -> Vec<LibraryEntry> {
    let all = library();
    names.iter().filter_map(|n| all.iter().find(|e| e.name == *n).cloned()).collect()
}

pub fn gbm() -> LibraryEntry {
    library().swap_remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_round_trips_and_inits_are_valid() {
        let lib = library();
        assert_eq!(lib.len(), 20);
        for e in &lib {
            assert_eq!(parse_model(&e.model.render()).unwrap(), e.model, "{}", e.name);
            let init = e.init_for(&[100.0; 10]);
            assert_eq!(init.len(), e.model.parameters().len(), "{}", e.name);
        }
        assert_eq!(gbm().name, "gbm");
        assert_eq!(library_subset(BENCHMARK_POOL).len(), 4);
    }

    #[test]
    fn models_are_distinct() {
        let lib = library();
        for (i, a) in lib.iter().enumerate() {
            for b in &lib[i + 1..] {
                assert_ne!(a.model, b.model);
            }
        }
    }
}
