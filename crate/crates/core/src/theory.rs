//! Numerical validation of the fusion-error bound on quadratic losses.
//!
//! For `L(θ) = ½‖Aθ − b‖²` every quantity in the bound has a closed form:
//! the global optimum, the optimum over a coordinate subspace with the other
//! coordinates frozen at `θ0`, and the gradient used to estimate the
//! Lipschitz constant. Proxy-side vectors are always stored in full space and
//! agree with `θ0` outside the mask, so fusing a proxy into `θ0` yields the
//! proxy vector itself.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::params::{norm, FlatParams, ParamLayout, SubspaceMask};
use crate::seed;

const RIDGE: f64 = 1e-10;
const FUSION_TOL: f64 = 1e-9;
const BOUND_TOL: f64 = 1e-9;
/// Each side of the probe box is pushed out by this fraction of its width,
/// so the box grows by 10% along every axis.
const INFLATE_PER_SIDE: f64 = 0.05;

/// `L(θ) = ½‖Aθ − b‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Quadratic {
    /// `a` is row-major, `rows × (a.len() / rows)`.
    pub fn new(rows: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if rows == 0 || a.len() % rows != 0 || b.len() != rows {
            return Err(Error::Dimension(format!(
                "quadratic with {rows} rows, {} matrix entries and {} targets",
                a.len(),
                b.len()
            )));
        }
        let cols = a.len() / rows;
        Self::from_matrix(DMatrix::from_row_slice(rows, cols, &a), DVector::from_vec(b))
    }

    pub fn from_matrix(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() || a.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "matrix {}×{} with {} targets",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("quadratic has non-finite entries".into()));
        }
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.b
    }

    fn residual(&self, theta: &[f64]) -> DVector<f64> {
        &self.a * DVector::from_column_slice(theta) - &self.b
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        0.5 * self.residual(theta).norm_squared()
    }

    /// `Aᵀ(Aθ − b)`.
    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        (self.a.transpose() * self.residual(theta)).as_slice().to_vec()
    }
}

/// Closed-form optima of a quadratic.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub theta_opt: Vec<f64>,
    /// Subspace optimum in full space: masked dims optimized, the rest `θ0`.
    pub phi_opt: Vec<f64>,
    pub min_loss: f64,
    pub subspace_min_loss: f64,
    /// Whether a ridge had to be added to make a normal matrix factorizable.
    pub regularized: bool,
}

fn solve_normal(gram: DMatrix<f64>, rhs: DVector<f64>, what: &str) -> Result<(DVector<f64>, bool)> {
    if let Some(ch) = gram.clone().cholesky() {
        return Ok((ch.solve(&rhs), false));
    }
    log::warn!("{what}: normal matrix not positive definite, adding {RIDGE:e}·I");
    let n = gram.nrows();
    let ridged = gram + DMatrix::identity(n, n) * RIDGE;
    match ridged.cholesky() {
        Some(ch) => Ok((ch.solve(&rhs), true)),
        None => Err(Error::Numerical(format!("{what}: rank deficient after regularization"))),
    }
}

pub fn quadratic_oracle(q: &Quadratic, mask: &SubspaceMask, theta0: &[f64]) -> Result<OracleSolution> {
    let d = q.dim();
    if mask.keep().len() != d || theta0.len() != d {
        return Err(Error::Dimension(format!(
            "oracle for {d} dims given mask of {} and θ0 of {}",
            mask.keep().len(),
            theta0.len()
        )));
    }
    let at = q.a.transpose();
    let (theta_opt, reg_full) = solve_normal(&at * &q.a, &at * &q.b, "global optimum")?;
    let theta_opt = theta_opt.as_slice().to_vec();

    let kept: Vec<usize> = (0..d).filter(|&i| mask.keep()[i]).collect();
    let mut phi_opt = theta0.to_vec();
    let mut reg_sub = false;
    if !kept.is_empty() {
        let a_m = q.a.select_columns(&kept);
        let mut frozen = theta0.to_vec();
        for &i in &kept {
            frozen[i] = 0.0;
        }
        let target = &q.b - &q.a * DVector::from_vec(frozen);
        let a_mt = a_m.transpose();
        let (x, reg) = solve_normal(&a_mt * &a_m, &a_mt * target, "subspace optimum")?;
        reg_sub = reg;
        for (&i, v) in kept.iter().zip(x.iter()) {
            phi_opt[i] = *v;
        }
    }
    Ok(OracleSolution {
        min_loss: q.loss(&theta_opt),
        subspace_min_loss: q.loss(&phi_opt),
        theta_opt,
        phi_opt,
        regularized: reg_full || reg_sub,
    })
}

/// `L(θ_new) − min_loss`, rejected when it is negative beyond tolerance.
pub fn fusion_error(loss: impl Fn(&[f64]) -> f64, theta_new: &[f64], min_loss: f64) -> Result<f64> {
    let gap = loss(theta_new) - min_loss;
    if gap < -FUSION_TOL {
        return Err(Error::Numerical(format!(
            "fused loss lies {:e} below the claimed optimum",
            -gap
        )));
    }
    Ok(gap)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapDecomposition {
    /// `L(φ*) − L(φ_opt)`: proxy suboptimality.
    pub t1: f64,
    /// `L(θ_new) − L(φ*)`: fusion step.
    pub t2: f64,
    /// `L(φ_opt) − L(θ_opt)`: cost of the subspace restriction.
    pub t3: f64,
    /// `L(θ_new) − L(θ_opt)`.
    pub total: f64,
}

impl GapDecomposition {
    pub fn sum(&self) -> f64 {
        self.t1 + self.t2 + self.t3
    }
}

pub fn gap_decomposition(
    loss: impl Fn(&[f64]) -> f64,
    oracle: &OracleSolution,
    phi_star: &[f64],
    theta_new: &[f64],
) -> GapDecomposition {
    let l_new = loss(theta_new);
    let l_star = loss(phi_star);
    GapDecomposition {
        t1: l_star - oracle.subspace_min_loss,
        t2: l_new - l_star,
        t3: oracle.subspace_min_loss - oracle.min_loss,
        total: l_new - oracle.min_loss,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    /// `‖θ_new − φ*‖²`.
    pub distance_sq: f64,
    /// `Σ_{d∉mask} (θ0[d] − φ*[d])²`.
    pub off_mask_sq: f64,
    pub residual: f64,
    /// `2(‖θ0|ᶜ‖² + ‖φ*|ᶜ‖²)`, always at least `off_mask_sq`.
    pub bound_side: f64,
    /// `‖θ0|ᶜ‖² + ‖φ*|ᶜ‖²` without the factor 2; can fall below
    /// `off_mask_sq` when the two vectors disagree in sign.
    pub tight_bound_side: f64,
    pub bound_holds: bool,
}

pub fn lemma1_check(theta_new: &[f64], phi_star: &[f64], theta0: &[f64], mask: &SubspaceMask) -> Result<Lemma1Report> {
    let d = mask.keep().len();
    if theta_new.len() != d || phi_star.len() != d || theta0.len() != d {
        return Err(Error::Dimension("lemma check vectors differ in length from the mask".into()));
    }
    let distance_sq: f64 = theta_new.iter().zip(phi_star).map(|(a, b)| (a - b).powi(2)).sum();
    let mut off_mask_sq = 0.0;
    let mut theta0_sq = 0.0;
    let mut phi_sq = 0.0;
    for i in (0..d).filter(|&i| !mask.keep()[i]) {
        off_mask_sq += (theta0[i] - phi_star[i]).powi(2);
        theta0_sq += theta0[i].powi(2);
        phi_sq += phi_star[i].powi(2);
    }
    let bound_side = 2.0 * (theta0_sq + phi_sq);
    Ok(Lemma1Report {
        distance_sq,
        off_mask_sq,
        residual: (distance_sq - off_mask_sq).abs(),
        bound_side,
        tight_bound_side: theta0_sq + phi_sq,
        bound_holds: off_mask_sq <= bound_side + BOUND_TOL,
    })
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("box needs lo ≤ hi in every dimension".into()));
        }
        Ok(Self { lo, hi })
    }

    /// Smallest box containing every point.
    pub fn bounding(points: &[&[f64]]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidArgument("bounding box of no points".into()))?;
        let mut lo = first.to_vec();
        let mut hi = first.to_vec();
        for p in &points[1..] {
            if p.len() != lo.len() {
                return Err(Error::Dimension("bounding box points differ in length".into()));
            }
            for i in 0..p.len() {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn inflated(&self, per_side: f64) -> Self {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| {
                let pad = (h - l) * per_side;
                (l - pad, h + pad)
            })
            .unzip();
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate {
    pub l_hat: f64,
    /// The inflated box the uniform probes were drawn from.
    pub region: BoxRegion,
    pub n_probes: usize,
}

/// Largest gradient norm over the anchors and `n_probes` uniform samples
/// from `region` inflated 5% per side.
///
/// Probes are drawn one after another from a single stream, so a run with
/// more probes evaluates a superset of the points of a run with fewer.
pub fn lipschitz_estimate(
    grad: impl Fn(&[f64]) -> Vec<f64>,
    region: &BoxRegion,
    anchors: &[&[f64]],
    n_probes: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if n_probes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 probes, got {n_probes}")));
    }
    let region = region.inflated(INFLATE_PER_SIDE);
    let mut l_hat: f64 = 0.0;
    for a in anchors {
        if a.len() != region.dim() {
            return Err(Error::Dimension("anchor dimension differs from the region".into()));
        }
        l_hat = l_hat.max(norm(&grad(a)));
    }
    let mut rng = seed::rng(seed);
    let mut probe = vec![0.0; region.dim()];
    for _ in 0..n_probes {
        for (i, p) in probe.iter_mut().enumerate() {
            let u: f64 = rng.gen();
            *p = region.lo[i] + u * (region.hi[i] - region.lo[i]);
        }
        l_hat = l_hat.max(norm(&grad(&probe)));
    }
    Ok(LipschitzEstimate { l_hat, region, n_probes })
}

/// A quadratic instance with every constant of the bound measured.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInstance {
    pub quadratic: Quadratic,
    pub mask: SubspaceMask,
    pub theta0: FlatParams,
    /// Trained proxy in full space; equals `θ0` off the mask.
    pub trained_phi: FlatParams,
    pub oracle: OracleSolution,
    pub l_hat: f64,
    pub region: BoxRegion,
    pub delta_sub: f64,
    pub eta_hat: f64,
    pub alpha: f64,
}

impl BoundInstance {
    /// Solves the oracle, measures `δ = max(0, L(φ*) − L(φ_opt))`, and
    /// estimates `L̂` over the box spanned by `θ0`, `θ_opt` and the fused
    /// model, which are also probed directly.
    pub fn measure(
        quadratic: Quadratic,
        mask: SubspaceMask,
        theta0: FlatParams,
        trained_phi: FlatParams,
        eta_hat: f64,
        n_probes: usize,
        seed: u64,
    ) -> Result<Self> {
        let d = quadratic.dim();
        if theta0.dim() != d || trained_phi.dim() != d {
            return Err(Error::Dimension(format!("bound instance vectors must have {d} dims")));
        }
        for i in (0..d).filter(|&i| !mask.keep()[i]) {
            if trained_phi.values()[i].to_bits() != theta0.values()[i].to_bits() {
                return Err(Error::InvalidArgument(format!(
                    "trained proxy differs from θ0 at off-mask dim {i}"
                )));
            }
        }
        if !(eta_hat >= 0.0) {
            return Err(Error::InvalidArgument("η̂ must be ≥ 0".into()));
        }
        let oracle = quadratic_oracle(&quadratic, &mask, theta0.values())?;
        let theta_new = fused(&theta0, &trained_phi, &mask);
        let anchors = [theta0.values(), oracle.theta_opt.as_slice(), theta_new.as_slice()];
        let box_ = BoxRegion::bounding(&anchors)?;
        let lip = lipschitz_estimate(|t| quadratic.grad(t), &box_, &anchors, n_probes, seed)?;
        let delta_sub = (quadratic.loss(trained_phi.values()) - oracle.subspace_min_loss).max(0.0);
        let alpha = mask.removed_fraction();
        Ok(Self {
            quadratic,
            mask,
            theta0,
            trained_phi,
            oracle,
            l_hat: lip.l_hat,
            region: lip.region,
            delta_sub,
            eta_hat,
            alpha,
        })
    }

    pub fn theta_new(&self) -> Vec<f64> {
        fused(&self.theta0, &self.trained_phi, &self.mask)
    }
}

fn fused(theta0: &FlatParams, phi: &FlatParams, mask: &SubspaceMask) -> Vec<f64> {
    theta0
        .values()
        .iter()
        .zip(phi.values())
        .zip(mask.keep())
        .map(|((&t, &p), &k)| if k { p } else { t })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub slack: f64,
    pub gap: GapDecomposition,
    pub l_hat: f64,
    pub delta_sub: f64,
    pub eta_hat: f64,
    pub alpha: f64,
    pub region: BoxRegion,
}

/// `ε_fusion ≤ δ + L̂·η̂·‖θ0‖ + L̂·‖θ0 − θ_opt‖·α`.
pub fn check_bound(inst: &BoundInstance) -> BoundCheck {
    let q = &inst.quadratic;
    let theta_new = inst.theta_new();
    let gap = gap_decomposition(|t| q.loss(t), &inst.oracle, inst.trained_phi.values(), &theta_new);
    let theta0 = inst.theta0.values();
    let dist: Vec<f64> = theta0.iter().zip(&inst.oracle.theta_opt).map(|(a, b)| a - b).collect();
    let rhs = inst.delta_sub + inst.l_hat * inst.eta_hat * norm(theta0) + inst.l_hat * norm(&dist) * inst.alpha;
    let lhs = gap.total;
    BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + BOUND_TOL,
        slack: rhs - lhs,
        gap,
        l_hat: inst.l_hat,
        delta_sub: inst.delta_sub,
        eta_hat: inst.eta_hat,
        alpha: inst.alpha,
        region: inst.region.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub dim: usize,
    pub rows: usize,
    /// Fraction of dimensions inside the proxy mask.
    pub keep_frac: f64,
    pub count: usize,
    pub seed: u64,
    pub n_probes: usize,
    /// Standard deviation of the training noise added to the subspace
    /// optimum on the masked dims.
    pub train_noise: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            rows: 12,
            keep_frac: 0.5,
            count: 100,
            seed: 0,
            n_probes: 64,
            train_noise: 0.1,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("sweep dim must be ≥ 1".into()));
        }
        if self.rows < self.dim {
            return Err(Error::Config(format!(
                "sweep needs rows ≥ dim for a positive definite quadratic ({} < {})",
                self.rows, self.dim
            )));
        }
        if !(self.keep_frac > 0.0 && self.keep_frac <= 1.0) {
            return Err(Error::Config("keep fraction must lie in (0, 1]".into()));
        }
        if self.n_probes < 2 {
            return Err(Error::Config("need at least 2 Lipschitz probes".into()));
        }
        if !(self.train_noise >= 0.0) || !self.train_noise.is_finite() {
            return Err(Error::Config("training noise must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// Number of masked dims for a sweep: `floor(dim · keep_frac)`, at least 1.
pub fn sweep_keep_count(dim: usize, keep_frac: f64) -> usize {
    (((dim as f64) * keep_frac + 1e-9).floor() as usize).clamp(1, dim)
}

/// Random instance number `index` of a sweep.
pub fn random_instance(cfg: &SweepConfig, index: usize) -> Result<BoundInstance> {
    cfg.validate()?;
    let (d, m) = (cfg.dim, cfg.rows);
    let inst_seed = seed::derive(cfg.seed, &[seed::tag::SWEEP, index as u64]);
    let mut rng = seed::rng(inst_seed);
    let scale = 1.0 / (m as f64).sqrt();
    let a: Vec<f64> = (0..m * d).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
    let b: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let theta0: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let keep = sweep_keep_count(d, cfg.keep_frac);
    let dims = rand::seq::index::sample(&mut rng, d, keep).into_vec();

    let layout = std::sync::Arc::new(ParamLayout::flat(d));
    let mask = SubspaceMask::from_dims(layout.clone(), &dims)?;
    let q = Quadratic::new(m, a, b)?;
    let oracle = quadratic_oracle(&q, &mask, &theta0)?;
    let mut phi = oracle.phi_opt.clone();
    for &i in &dims {
        phi[i] += cfg.train_noise * rng.sample::<f64, _>(StandardNormal);
    }
    // off-mask entries of the subspace optimum are θ0 already; copy them
    // bitwise so the embedding invariant holds exactly
    for i in (0..d).filter(|&i| !mask.keep()[i]) {
        phi[i] = theta0[i];
    }
    BoundInstance::measure(
        q,
        mask,
        FlatParams::new(layout.clone(), theta0)?,
        FlatParams::new(layout, phi)?,
        0.0,
        cfg.n_probes,
        seed::derive(inst_seed, &[1]),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub check: BoundCheck,
}

pub const SWEEP_CSV_HEADER: &str = "lhs,rhs,T1,T2,T3,L_hat,alpha,holds";

pub fn sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    (0..cfg.count)
        .map(|i| {
            let inst = random_instance(cfg, i)?;
            Ok(SweepRow {
                index: i,
                check: check_bound(&inst),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let c = &r.check;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.lhs, c.rhs, c.gap.t1, c.gap.t2, c.gap.t3, c.l_hat, c.alpha, c.holds
        ));
    }
    out
}
