use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aggregation method, including the single-component ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// PCR-regularized clients, H-TIES server merge.
    Fedproxy,
    /// Unregularized clients, uniform parameter averaging.
    Fedavg,
    /// Proximal-term clients, uniform parameter averaging.
    Fedprox,
    /// Unregularized clients, classic trim/elect/disjoint-mean merge.
    Ties,
    /// H-TIES merge with the PCR coefficient forced to zero.
    FedproxyNoPcr,
    /// PCR-regularized clients, uniform parameter averaging.
    FedproxyNoHties,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Fedproxy,
        Method::FedproxyNoPcr,
        Method::FedproxyNoHties,
        Method::Fedavg,
        Method::Fedprox,
        Method::Ties,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fedproxy => "fedproxy",
            Method::Fedavg => "fedavg",
            Method::Fedprox => "fedprox",
            Method::Ties => "ties",
            Method::FedproxyNoPcr => "fedproxy_no_pcr",
            Method::FedproxyNoHties => "fedproxy_no_hties",
        }
    }

    pub fn uses_pcr(self) -> bool {
        matches!(self, Method::Fedproxy | Method::FedproxyNoHties)
    }

    pub fn uses_hties(self) -> bool {
        matches!(self, Method::Fedproxy | Method::FedproxyNoPcr)
    }

    pub fn uses_prox(self) -> bool {
        self == Method::Fedprox
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggConfig {
    pub method: Method,
    /// Base retention rate of the heterogeneity-adaptive trim.
    pub r0: f64,
    /// Retention penalty per unit of normalized heterogeneity.
    pub delta_adapt: f64,
    /// Dominance threshold for the sign election, ≥ 1.
    pub rho: f64,
    /// Stability constant in the dominance ratio.
    pub eps: f64,
    /// Fraction of entries kept by the plain TIES baseline.
    pub ties_density: f64,
    /// Scale applied to the plain TIES merged update.
    pub ties_lambda: f64,
}

impl Default for AggConfig {
    fn default() -> Self {
        Self {
            method: Method::Fedproxy,
            r0: 1.0,
            delta_adapt: 0.2,
            rho: 1.1,
            eps: 1e-8,
            ties_density: 0.2,
            ties_lambda: 1.0,
        }
    }
}

impl AggConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_owned()));
        if !(0.0..=1.0).contains(&self.r0) {
            return bad("aggregation.r0 must be in [0, 1]");
        }
        if !(self.delta_adapt >= 0.0 && self.delta_adapt.is_finite()) {
            return bad("aggregation.delta_adapt must be ≥ 0");
        }
        if !(self.rho >= 1.0 && self.rho.is_finite()) {
            return bad("aggregation.rho must be ≥ 1");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("aggregation.eps must be > 0");
        }
        if !(self.ties_density > 0.0 && self.ties_density <= 1.0) {
            return bad("aggregation.ties_density must be in (0, 1]");
        }
        if !self.ties_lambda.is_finite() {
            return bad("aggregation.ties_lambda must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    /// PCR coefficient.
    pub lambda_reg: f64,
    /// FedProx proximal coefficient.
    pub mu_prox: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            lambda_reg: 1e-5,
            mu_prox: 0.01,
            lr: 0.05,
            epochs: 2,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_owned()));
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return bad("client.lambda_reg must be ≥ 0");
        }
        if !(self.mu_prox >= 0.0 && self.mu_prox.is_finite()) {
            return bad("client.mu_prox must be ≥ 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("client.lr must be > 0");
        }
        if self.batch_size == 0 {
            return bad("client.batch_size must be > 0");
        }
        Ok(())
    }

    /// Local SGD steps for a dataset of `n` samples.
    pub fn steps(&self, n: usize) -> usize {
        self.epochs * n.div_ceil(self.batch_size)
    }
}
