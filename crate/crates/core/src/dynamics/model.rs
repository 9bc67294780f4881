//! Affine rate models `q_{s s'}(phi) = a[s'->s] + sum_r b[s'->s, r] phi_r`.
//!
//! All coefficients are nonnegative, so rates are nonnegative on `phi >= 0`
//! and globally Lipschitz with constant `sum_r b[s'->s, r]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RateModel {
    states: Vec<String>,
    /// `[from * S + to]`
    base: Vec<f64>,
    /// `[(from * S + to) * S + via]`
    interaction: Vec<f64>,
    /// Total base exit rate per source state.
    base_out: Vec<f64>,
    /// `[from * S + via]`: total interaction exit coefficient.
    inter_out: Vec<f64>,
}

impl RateModel {
    pub fn new(states: Vec<String>, base: Vec<f64>, interaction: Vec<f64>) -> Result<Self> {
        let s = states.len();
        if s == 0 {
            return Err(Error::InvalidModel("model needs at least one state".into()));
        }
        if s > u8::MAX as usize {
            return Err(Error::InvalidModel("at most 255 states are supported".into()));
        }
        for (i, a) in states.iter().enumerate() {
            if states[..i].contains(a) {
                return Err(Error::InvalidModel(format!("duplicate state label {a:?}")));
            }
        }
        if base.len() != s * s || interaction.len() != s * s * s {
            return Err(Error::InvalidModel("coefficient arrays have wrong size".into()));
        }
        if base.iter().chain(&interaction).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidModel(
                "rate coefficients must be finite and nonnegative".into(),
            ));
        }
        let mut m = RateModel {
            states,
            base,
            interaction,
            base_out: vec![0.0; s],
            inter_out: vec![0.0; s * s],
        };
        // Diagonal entries carry no meaning; zero them so they never leak into sums.
        for a in 0..s {
            m.base[a * s + a] = 0.0;
            for r in 0..s {
                m.interaction[(a * s + a) * s + r] = 0.0;
            }
        }
        for from in 0..s {
            for to in 0..s {
                m.base_out[from] += m.base[from * s + to];
                for r in 0..s {
                    m.inter_out[from * s + r] += m.interaction[(from * s + to) * s + r];
                }
            }
        }
        Ok(m)
    }

    /// Model with every rate zero.
    pub fn zero(states: &[&str]) -> Result<Self> {
        let s = states.len();
        Self::new(
            states.iter().map(|x| x.to_string()).collect(),
            vec![0.0; s * s],
            vec![0.0; s * s * s],
        )
    }

    /// SIS: `I -> S` at rate 1, `S -> I` at rate `beta * phi_I`.
    pub fn sis(beta: f64) -> Result<Self> {
        let mut b = ModelBuilder::new(&["S", "I"]);
        b.base("I", "S", 1.0)?;
        b.interaction("S", "I", "I", beta)?;
        b.build()
    }

    /// SIR: `I -> R` at rate 1, `S -> I` at rate `beta * phi_I`.
    pub fn sir(beta: f64) -> Result<Self> {
        let mut b = ModelBuilder::new(&["S", "I", "R"]);
        b.base("I", "R", 1.0)?;
        b.interaction("S", "I", "I", beta)?;
        b.build()
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    pub fn base_rate(&self, from: usize, to: usize) -> f64 {
        self.base[from * self.n_states() + to]
    }

    pub fn interaction_rate(&self, from: usize, to: usize, via: usize) -> f64 {
        let s = self.n_states();
        self.interaction[(from * s + to) * s + via]
    }

    pub fn is_zero(&self) -> bool {
        self.base.iter().chain(&self.interaction).all(|&v| v == 0.0)
    }

    /// Rate of the transition `from -> to` in environment `phi`.
    #[inline]
    pub fn rate(&self, from: usize, to: usize, phi: &[f64]) -> f64 {
        let s = self.n_states();
        let row = &self.interaction[(from * s + to) * s..(from * s + to + 1) * s];
        self.base[from * s + to] + row.iter().zip(phi).map(|(b, p)| b * p).sum::<f64>()
    }

    /// Total exit rate of `from` given neighbor counts scaled by `scale`.
    #[inline]
    pub(crate) fn exit_rate_counts(&self, from: usize, counts: &[u32], scale: f64) -> f64 {
        let s = self.n_states();
        let row = &self.inter_out[from * s..(from + 1) * s];
        let mut acc = 0.0;
        for (b, &c) in row.iter().zip(counts) {
            acc += b * c as f64;
        }
        self.base_out[from] + scale * acc
    }

    /// True when some rate depends on `phi_via`.
    pub fn uses_env(&self, via: usize) -> bool {
        let s = self.n_states();
        (0..s).any(|from| self.inter_out[from * s + via] != 0.0)
    }

    /// True when the exit rate of `state` depends on `phi_via`.
    #[inline]
    pub(crate) fn depends_on(&self, state: usize, via: usize) -> bool {
        self.inter_out[state * self.n_states() + via] != 0.0
    }

    /// `Q(phi)` as a row-major `S x S` matrix with `Q[to][from] = q_{to,from}`
    /// and diagonal `-sum` of exit rates, so that `dv/dt = Q v`.
    pub fn rate_matrix(&self, phi: &[f64]) -> Vec<f64> {
        let s = self.n_states();
        let mut q = vec![0.0; s * s];
        for from in 0..s {
            for to in 0..s {
                if to != from {
                    let r = self.rate(from, to, phi);
                    q[to * s + from] = r;
                    q[from * s + from] -= r;
                }
            }
        }
        q
    }

    /// `out = Q(phi) v`.
    #[inline]
    pub fn apply_generator(&self, phi: &[f64], v: &[f64], out: &mut [f64]) {
        let s = self.n_states();
        out.iter_mut().for_each(|o| *o = 0.0);
        for from in 0..s {
            let mass = v[from];
            for to in 0..s {
                if to != from {
                    let flow = self.rate(from, to, phi) * mass;
                    out[to] += flow;
                    out[from] -= flow;
                }
            }
        }
    }

    /// `L_{s s'} = sum_r b[s'->s, r]`, indexed `[from * S + to]`.
    pub fn lipschitz_constants(&self) -> Vec<f64> {
        let s = self.n_states();
        (0..s * s)
            .map(|ft| self.interaction[ft * s..(ft + 1) * s].iter().sum())
            .collect()
    }

    /// Lipschitz constant of `phi -> Q(phi)` in the induced `l^1` norm.
    pub fn lipschitz_q(&self) -> f64 {
        let s = self.n_states();
        (0..s)
            .map(|from| {
                let row = &self.inter_out[from * s..(from + 1) * s];
                2.0 * row.iter().fold(0.0f64, |m, &v| m.max(v))
            })
            .fold(0.0, f64::max)
    }

    /// `max_{phi in simplex} ||Q(phi)||_1`; the affine rates peak at a vertex.
    pub fn q_max(&self) -> f64 {
        let s = self.n_states();
        let mut best: f64 = 0.0;
        for r in 0..s {
            let mut phi = vec![0.0; s];
            phi[r] = 1.0;
            let q = self.rate_matrix(&phi);
            for col in 0..s {
                best = best.max((0..s).map(|row| q[row * s + col].abs()).sum());
            }
        }
        best
    }
}

/// Builds a [`RateModel`] from labeled transitions.
pub struct ModelBuilder {
    states: Vec<String>,
    base: Vec<f64>,
    interaction: Vec<f64>,
}

impl ModelBuilder {
    pub fn new(states: &[&str]) -> Self {
        let s = states.len();
        ModelBuilder {
            states: states.iter().map(|x| x.to_string()).collect(),
            base: vec![0.0; s * s],
            interaction: vec![0.0; s * s * s],
        }
    }

    fn idx(&self, label: &str) -> Result<usize> {
        self.states
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| Error::InvalidModel(format!("unknown state {label:?}")))
    }

    fn pair(&self, from: &str, to: &str) -> Result<(usize, usize)> {
        let (f, t) = (self.idx(from)?, self.idx(to)?);
        if f == t {
            return Err(Error::InvalidModel(format!(
                "transition {from:?} -> {to:?} has identical endpoints"
            )));
        }
        Ok((f, t))
    }

    pub fn base(&mut self, from: &str, to: &str, rate: f64) -> Result<&mut Self> {
        let (f, t) = self.pair(from, to)?;
        let s = self.states.len();
        self.base[f * s + t] += rate;
        Ok(self)
    }

    pub fn interaction(&mut self, from: &str, to: &str, via: &str, coeff: f64) -> Result<&mut Self> {
        let (f, t) = self.pair(from, to)?;
        let v = self.idx(via)?;
        let s = self.states.len();
        self.interaction[(f * s + t) * s + v] += coeff;
        Ok(self)
    }

    pub fn build(&self) -> Result<RateModel> {
        RateModel::new(
            self.states.clone(),
            self.base.clone(),
            self.interaction.clone(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Sis,
    Sir,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseTransition {
    pub from: String,
    pub to: String,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionTransition {
    pub from: String,
    pub to: String,
    pub via: String,
    pub coeff: f64,
}

/// JSON form of a rate model: a named preset or explicit sparse lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset {
        preset: Preset,
        beta: f64,
    },
    Custom {
        states: Vec<String>,
        #[serde(default)]
        base: Vec<BaseTransition>,
        #[serde(default)]
        interaction: Vec<InteractionTransition>,
    },
}

impl ModelSpec {
    pub fn sis(beta: f64) -> Self {
        ModelSpec::Preset {
            preset: Preset::Sis,
            beta,
        }
    }

    pub fn build(&self) -> Result<RateModel> {
        match self {
            ModelSpec::Preset { preset, beta } => {
                if !(beta.is_finite() && *beta >= 0.0) {
                    return Err(Error::InvalidModel(format!("beta must be >= 0, got {beta}")));
                }
                match preset {
                    Preset::Sis => RateModel::sis(*beta),
                    Preset::Sir => RateModel::sir(*beta),
                }
            }
            ModelSpec::Custom {
                states,
                base,
                interaction,
            } => {
                let labels: Vec<&str> = states.iter().map(String::as_str).collect();
                let mut b = ModelBuilder::new(&labels);
                for t in base {
                    b.base(&t.from, &t.to, t.rate)?;
                }
                for t in interaction {
                    b.interaction(&t.from, &t.to, &t.via, t.coeff)?;
                }
                b.build()
            }
        }
    }

    /// Infection rate of an SIS preset.
    pub fn sis_beta(&self) -> Option<f64> {
        match self {
            ModelSpec::Preset {
                preset: Preset::Sis,
                beta,
            } => Some(*beta),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sis_rate_matrix() {
        let m = RateModel::sis(2.0).unwrap();
        let q = m.rate_matrix(&[0.3, 0.7]);
        // [[-beta phi_I, 1], [beta phi_I, -1]]
        assert_eq!(q, vec![-1.4, 1.0, 1.4, -1.0]);
        assert_eq!(m.lipschitz_constants(), vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn generator_columns_sum_to_zero() {
        let m = RateModel::sir(3.0).unwrap();
        let q = m.rate_matrix(&[0.2, 0.5, 0.1]);
        for col in 0..3 {
            let s: f64 = (0..3).map(|r| q[r * 3 + col]).sum();
            assert!(s.abs() < 1e-15);
        }
        let mut out = [0.0; 3];
        m.apply_generator(&[0.2, 0.5, 0.1], &[0.5, 0.3, 0.2], &mut out);
        assert!(out.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(RateModel::new(vec!["A".into()], vec![-1.0], vec![0.0]).is_err());
        assert!(RateModel::new(vec!["A".into(), "A".into()], vec![0.0; 4], vec![0.0; 8]).is_err());
        let mut b = ModelBuilder::new(&["S", "I"]);
        assert!(b.base("S", "S", 1.0).is_err());
        assert!(b.base("S", "X", 1.0).is_err());
    }

    #[test]
    fn json_specs() {
        let sis: ModelSpec = serde_json::from_str(r#"{"preset":"sis","beta":2.0}"#).unwrap();
        assert_eq!(sis.build().unwrap(), RateModel::sis(2.0).unwrap());
        let custom: ModelSpec = serde_json::from_str(
            r#"{"states":["S","I"],
                "base":[{"from":"I","to":"S","rate":1.0}],
                "interaction":[{"from":"S","to":"I","via":"I","coeff":2.0}]}"#,
        )
        .unwrap();
        assert_eq!(custom.build().unwrap(), RateModel::sis(2.0).unwrap());
        let bad: ModelSpec = serde_json::from_str(
            r#"{"states":["S","I"],"base":[{"from":"I","to":"Z","rate":1.0}]}"#,
        )
        .unwrap();
        assert!(bad.build().is_err());
    }

    #[test]
    fn q_max_and_lipschitz() {
        let m = RateModel::sis(2.0).unwrap();
        // At phi = e_I: column S has |-2| + 2, column I has 1 + |-1|.
        assert_eq!(m.q_max(), 4.0);
        assert_eq!(m.lipschitz_q(), 4.0);
    }
}
