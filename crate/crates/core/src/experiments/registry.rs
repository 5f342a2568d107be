//! Built-in experiments with their published defaults.

use std::fmt;

use super::problems::{
    appendix_sim_spec, appendix_toy_spec, example_1d_spec, example_inverse_spec, example_selection_spec, Noise,
    ProblemSpec,
};
use crate::training::Variant;

#[derive(Clone, Debug, PartialEq)]
pub struct BuiltinExperiment {
    pub name: &'static str,
    pub summary: &'static str,
    pub n: usize,
    pub m: usize,
    /// Noise settings run by default; several entries mean one sweep each.
    pub noises: Vec<Noise>,
    pub variants: Vec<(Variant, f64)>,
    /// Features appended to tabular data; zero for synthetic problems.
    pub noise_features: usize,
}

impl BuiltinExperiment {
    /// Synthetic problem for these sizes and noise; `None` for tabular data.
    pub fn spec(&self, n: usize, m: usize, noise: Noise) -> Option<ProblemSpec> {
        let mut spec = match self.name {
            "example6_1" => example_1d_spec(n, m),
            "example6_2" => example_selection_spec(n, m),
            "example6_3" => example_inverse_spec(n, m, 0.0),
            "appendix_toy" => appendix_toy_spec(n, m),
            "appendix_sim" => appendix_sim_spec(n, m),
            _ => return None,
        };
        spec.noise = noise;
        Some(spec)
    }
}

fn fmt_noise(n: &Noise) -> String {
    match n {
        Noise::Sigma(s) => format!("sigma={s}"),
        Noise::Snr(r) => format!("snr={r}"),
    }
}

impl fmt::Display for BuiltinExperiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let noises: Vec<String> = self.noises.iter().map(fmt_noise).collect();
        let variants: Vec<String> = self
            .variants
            .iter()
            .map(|(v, l)| format!("{}(lambda={l:e})", v.name()))
            .collect();
        if self.noise_features > 0 {
            write!(
                f,
                "{:<13} data=<csv path> target={} noise_features={} variants=[{}]",
                self.name,
                super::data::HOUSING_TARGET,
                self.noise_features,
                variants.join(", ")
            )?;
        } else {
            write!(
                f,
                "{:<13} n={} m={} noise={{{}}} variants=[{}]",
                self.name,
                self.n,
                self.m,
                noises.join(", "),
                variants.join(", ")
            )?;
        }
        write!(f, "\n              {}", self.summary)
    }
}

pub fn registry() -> Vec<BuiltinExperiment> {
    vec![
        BuiltinExperiment {
            name: "example6_1",
            summary: "1-D regression, f0 = 1 + 36x^2 - 59x^3 + 21x^5 + 0.5cos(pi x) on U[0,1]",
            n: 500,
            m: 5000,
            noises: vec![Noise::Snr(30.0)],
            variants: vec![(Variant::Sdore, 1e-3)],
            noise_features: 0,
        },
        BuiltinExperiment {
            name: "example6_2",
            summary: "variable selection in d=20, f0 = sum of pairwise products of x1..x4",
            n: 100,
            m: 1000,
            noises: vec![Noise::Snr(25.0)],
            variants: vec![(Variant::Dore, 1e-2), (Variant::Sdore, 1e-2)],
            noise_features: 0,
        },
        BuiltinExperiment {
            name: "example6_3",
            summary: "inverse source, u* = cos(2 pi x1)cos(3 pi x2), w = 3 pi^2, f* = 16 pi^2 u*",
            n: 10_000,
            m: 10_000,
            noises: vec![Noise::Sigma(0.10), Noise::Sigma(0.20)],
            variants: [1e-2, 1e-4, 1e-6, 1e-8, 0.0]
                .into_iter()
                .map(|l| (Variant::Sdore, l))
                .collect(),
            noise_features: 0,
        },
        BuiltinExperiment {
            name: "appendix_toy",
            summary: "f0 = x1^2 with x1 ~ U[-1,1], x2 ~ N(0, 0.05) irrelevant, nu uniform on [-1,1]^2",
            n: 500,
            m: 5000,
            noises: vec![Noise::Sigma(0.1f64.sqrt())],
            variants: vec![(Variant::Sdore, 1e-4)],
            noise_features: 0,
        },
        BuiltinExperiment {
            name: "appendix_sim",
            summary: "f0 = 2x1^2 + e^x2 + 2sin(x3) + 2cos(x4+1) in d=10, x5..x10 ~ U[0,0.05]",
            n: 500,
            m: 5000,
            noises: vec![Noise::Snr(25.0)],
            variants: vec![(Variant::Dore, 1e-4), (Variant::Sdore, 1e-4)],
            noise_features: 0,
        },
        BuiltinExperiment {
            name: "csv_selection",
            summary: "variable selection on a CSV table (housing schema) with appended U[0,1] noise columns",
            n: 0,
            m: 0,
            noises: vec![],
            variants: vec![(Variant::Sdore, 1e-4)],
            noise_features: 7,
        },
    ]
}

pub fn builtin(name: &str) -> Option<BuiltinExperiment> {
    registry().into_iter().find(|e| e.name == name)
}
