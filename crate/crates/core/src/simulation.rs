//! Synthetic problems, Gaussian state and noise draws, and Matérn spatial
//! fields.
//!
//! # Seed schedule
//!
//! Every random quantity is drawn from a ChaCha8 stream derived from one
//! master seed: the generator is keyed by the master seed and the 64-bit
//! stream id `tag << 56 | i << 28 | j`, where `tag` names the purpose (see
//! [`streams`]) and `i`, `j` index the replicate. Streams never overlap, so
//! draws are reproducible under any parallel schedule.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bayes::PriorModel;
use crate::constraints::{ConstraintSet, Descriptor};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{boundary_halved_average, LinearProblem, NoiseCovariance};

/// Stream tags of the seed schedule.
pub mod streams {
    pub const GENERATOR: u64 = 0;
    pub const STATE: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const GRID: u64 = 3;
    pub const EXTERNAL: u64 = 4;
    pub const VALIDATE: u64 = 5;
}

/// RNG for stream `(tag, i, j)` of a master seed.
pub fn substream(master: u64, tag: u64, i: u64, j: u64) -> ChaCha8Rng {
    debug_assert!(tag < 256 && i < (1 << 28) && j < (1 << 28));
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream((tag << 56) | (i << 28) | j);
    rng
}

pub fn standard_normal_vec(len: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

// ---------------------------------------------------------------------------
// Single-sounding generative model

/// True-state law `x ~ N(mu_x, sigma_x)`. A singular `sigma_x` (down to a
/// point mass) is accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeModel {
    pub mu_x: DVector<f64>,
    pub sigma_x: DMatrix<f64>,
}

impl GenerativeModel {
    pub fn new(mu_x: DVector<f64>, sigma_x: DMatrix<f64>) -> Result<Self> {
        let p = mu_x.len();
        if sigma_x.shape() != (p, p) {
            return Err(Error::dim("sigma_x", format!("{p}x{p}"), format!("{}x{}", sigma_x.nrows(), sigma_x.ncols())));
        }
        if mu_x.iter().chain(sigma_x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("generative", "entries must be finite"));
        }
        if !linalg::is_symmetric(&sigma_x, 1e-12) {
            return Err(Error::invalid("sigma_x", "matrix is not symmetric"));
        }
        if linalg::psd_factor(&sigma_x).is_none() {
            return Err(Error::CholeskyFailure("sigma_x".into()));
        }
        Ok(GenerativeModel { mu_x, sigma_x })
    }

    pub fn dim(&self) -> usize {
        self.mu_x.len()
    }

    pub fn sampler(&self) -> StateSampler {
        let l = linalg::psd_factor(&self.sigma_x).expect("validated at construction");
        StateSampler {
            mu: self.mu_x.clone(),
            l,
        }
    }
}

/// Precomputed `x = mu + L z` sampler.
#[derive(Debug, Clone)]
pub struct StateSampler {
    mu: DVector<f64>,
    l: DMatrix<f64>,
}

impl StateSampler {
    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let z = standard_normal_vec(self.l.ncols(), rng);
        &self.mu + &self.l * z
    }
}

/// One state draw from stream `(STATE, 0, 0)` of `seed`.
pub fn sample_state(generative: &GenerativeModel, seed: u64) -> DVector<f64> {
    generative.sampler().sample(&mut substream(seed, streams::STATE, 0, 0))
}

// ---------------------------------------------------------------------------
// Spatial model

/// Matérn correlation at half-integer smoothness `nu` in {1/2, 3/2, 5/2}.
pub fn matern(nu: f64, rho: f64, d: f64) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    let t = d / rho;
    if nu == 0.5 {
        (-t).exp()
    } else if nu == 1.5 {
        let a = 3f64.sqrt() * t;
        (1.0 + a) * (-a).exp()
    } else if nu == 2.5 {
        let a = 5f64.sqrt() * t;
        (1.0 + a + a * a / 3.0) * (-a).exp()
    } else {
        panic!("unsupported Matérn smoothness {nu}")
    }
}

fn is_supported_nu(nu: f64) -> bool {
    nu == 0.5 || nu == 1.5 || nu == 2.5
}

/// Gaussian random field of states over a set of sounding locations with
/// cross-covariance `C_kl(s, s') = sigma_x[k,l] * M(nu_kl, rho_kl; |s - s'|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialModel {
    /// Coordinates in km.
    pub locations: Vec<[f64; 2]>,
    pub nu: DMatrix<f64>,
    pub rho: DMatrix<f64>,
    pub base: GenerativeModel,
}

impl SpatialModel {
    pub fn new(locations: Vec<[f64; 2]>, nu: DMatrix<f64>, rho: DMatrix<f64>, base: GenerativeModel) -> Result<Self> {
        let p = base.dim();
        if locations.is_empty() {
            return Err(Error::invalid("locations", "at least one location is required"));
        }
        for (name, m) in [("nu", &nu), ("rho", &rho)] {
            if m.shape() != (p, p) {
                return Err(Error::dim(name, format!("{p}x{p}"), format!("{}x{}", m.nrows(), m.ncols())));
            }
            if m != &m.transpose() {
                return Err(Error::invalid(name, "matrix is not symmetric"));
            }
        }
        if nu.iter().any(|&v| !is_supported_nu(v)) {
            return Err(Error::invalid("nu", "smoothness must be one of 0.5, 1.5, 2.5"));
        }
        if rho.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("rho", "ranges must be positive and finite"));
        }
        if locations.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("locations", "coordinates must be finite"));
        }
        Ok(SpatialModel {
            locations,
            nu,
            rho,
            base,
        })
    }

    /// Same smoothness and range for every element pair.
    pub fn isotropic(locations: Vec<[f64; 2]>, nu: f64, rho: f64, base: GenerativeModel) -> Result<Self> {
        let p = base.dim();
        Self::new(
            locations,
            DMatrix::from_element(p, p, nu),
            DMatrix::from_element(p, p, rho),
            base,
        )
    }

    /// Regular `nx x ny` grid with the given spacing, row-major (x fastest).
    pub fn grid_locations(nx: usize, ny: usize, spacing_km: f64) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                out.push([ix as f64 * spacing_km, iy as f64 * spacing_km]);
            }
        }
        out
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    /// Joint covariance of all states, location-major (`loc * p + k`).
    pub fn assemble(&self) -> DMatrix<f64> {
        let p = self.base.dim();
        let nl = self.locations.len();
        let sx = &self.base.sigma_x;
        let mut c = DMatrix::zeros(nl * p, nl * p);
        for a in 0..nl {
            for b in a..nl {
                let (sa, sb) = (self.locations[a], self.locations[b]);
                let d = ((sa[0] - sb[0]).powi(2) + (sa[1] - sb[1]).powi(2)).sqrt();
                for k in 0..p {
                    for l in 0..p {
                        let s = sx[(k, l)];
                        if s == 0.0 {
                            continue;
                        }
                        let v = s * matern(self.nu[(k, l)], self.rho[(k, l)], d);
                        c[(a * p + k, b * p + l)] = v;
                        c[(b * p + l, a * p + k)] = v;
                    }
                }
            }
        }
        c
    }

    /// One smoothness and one range shared by every element pair.
    pub fn is_isotropic(&self) -> bool {
        let (nu0, rho0) = (self.nu[(0, 0)], self.rho[(0, 0)]);
        self.nu.iter().all(|&v| v == nu0) && self.rho.iter().all(|&v| v == rho0)
    }

    /// Site-to-site Matérn correlation matrix of an isotropic model.
    fn site_correlation(&self) -> DMatrix<f64> {
        let (nu, rho) = (self.nu[(0, 0)], self.rho[(0, 0)]);
        let nl = self.locations.len();
        DMatrix::from_fn(nl, nl, |a, b| {
            let (sa, sb) = (self.locations[a], self.locations[b]);
            matern(nu, rho, ((sa[0] - sb[0]).powi(2) + (sa[1] - sb[1]).powi(2)).sqrt())
        })
    }

    /// Factor the joint covariance, adding at most `1e-8 * max diag` jitter.
    ///
    /// Isotropic models have covariance `R (x) sigma_x`, so only the site
    /// correlation `R` and `sigma_x` are factored.
    pub fn sampler(&self) -> Result<GridSampler> {
        const CAP: f64 = 1e-8;
        let (c, kron) = if self.is_isotropic() {
            (self.site_correlation(), true)
        } else {
            (self.assemble(), false)
        };
        let scale = c.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b));
        let (l, jitter) = linalg::cholesky_with_jitter(&c, CAP).ok_or(Error::AssemblyNotPsd {
            jitter: f64::INFINITY,
            cap: CAP * scale,
        })?;
        if jitter > 0.0 {
            log::info!("spatial covariance assembled with diagonal jitter {jitter:.3e}");
        }
        let factor = if kron {
            let lx = linalg::psd_factor(&self.base.sigma_x).ok_or_else(|| Error::CholeskyFailure("sigma_x".into()))?;
            SpatialFactor::Kronecker { sites: l, state: lx }
        } else {
            SpatialFactor::Joint(l)
        };
        Ok(GridSampler {
            mu: self.base.mu_x.clone(),
            n_locations: self.locations.len(),
            factor,
            jitter,
        })
    }
}

#[derive(Debug, Clone)]
enum SpatialFactor {
    Joint(DMatrix<f64>),
    Kronecker { sites: DMatrix<f64>, state: DMatrix<f64> },
}

/// Precomputed joint factor of a [`SpatialModel`].
#[derive(Debug, Clone)]
pub struct GridSampler {
    mu: DVector<f64>,
    n_locations: usize,
    factor: SpatialFactor,
    pub jitter: f64,
}

impl GridSampler {
    /// One joint draw as a `#locations x p` matrix.
    pub fn sample(&self, rng: &mut impl Rng) -> DMatrix<f64> {
        let p = self.mu.len();
        let nl = self.n_locations;
        let dev = match &self.factor {
            SpatialFactor::Joint(l) => {
                let v = l * standard_normal_vec(l.ncols(), rng);
                DMatrix::from_fn(nl, p, |a, k| v[a * p + k])
            }
            SpatialFactor::Kronecker { sites, state } => {
                // Row-major fill keeps the draw order of the joint path.
                let z = standard_normal_vec(nl * state.ncols(), rng);
                let z = DMatrix::from_row_slice(nl, state.ncols(), z.as_slice());
                sites * z * state.transpose()
            }
        };
        DMatrix::from_fn(nl, p, |a, k| self.mu[k] + dev[(a, k)])
    }
}

pub fn sample_grid(spatial: &SpatialModel, seed: u64) -> Result<DMatrix<f64>> {
    Ok(spatial.sampler()?.sample(&mut substream(seed, streams::GRID, 0, 0)))
}

// ---------------------------------------------------------------------------
// Noise

/// Independent Gaussian noise with `Var(e_j) = c_{band(j)} * mean_signal_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub band_of: Vec<usize>,
    pub band_constants: Vec<f64>,
    pub mean_signal: DVector<f64>,
    sd: DVector<f64>,
}

impl NoiseModel {
    /// `mean_signal` is clamped below at `1e-6 * max(mean_signal)`.
    pub fn new(band_of: Vec<usize>, band_constants: Vec<f64>, mean_signal: DVector<f64>) -> Result<Self> {
        let n = mean_signal.len();
        if band_of.len() != n {
            return Err(Error::dim("band_of", n, band_of.len()));
        }
        if band_constants.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::invalid("band_constants", "constants must be positive and finite"));
        }
        if let Some(&b) = band_of.iter().find(|&&b| b >= band_constants.len()) {
            return Err(Error::invalid("band_of", format!("band {b} has no constant")));
        }
        let max = mean_signal.iter().fold(0.0_f64, |a, &b| a.max(b));
        if !(max > 0.0 && max.is_finite()) {
            return Err(Error::invalid("mean_signal", "needs a positive finite maximum"));
        }
        let floor = 1e-6 * max;
        let mean_signal = mean_signal.map(|m| m.max(floor));
        let sd = DVector::from_fn(n, |j, _| (band_constants[band_of[j]] * mean_signal[j]).sqrt());
        Ok(NoiseModel {
            band_of,
            band_constants,
            mean_signal,
            sd,
        })
    }

    /// Noise law matching a diagonal-covariance problem: one band, unit constant.
    pub fn from_problem(problem: &LinearProblem) -> Result<Self> {
        match problem.noise_cov() {
            NoiseCovariance::Diagonal(v) => Self::new(vec![0; v.len()], vec![1.0], v.clone()),
            NoiseCovariance::Dense(_) => Err(Error::invalid("noise_cov", "noise model needs a diagonal covariance")),
        }
    }

    pub fn dim(&self) -> usize {
        self.sd.len()
    }

    pub fn variances(&self) -> DVector<f64> {
        self.sd.map(|s| s * s)
    }

    pub fn sd(&self) -> &DVector<f64> {
        &self.sd
    }

    pub fn covariance(&self) -> NoiseCovariance {
        NoiseCovariance::Diagonal(self.variances())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        DVector::from_fn(self.sd.len(), |j, _| self.sd[j] * rng.sample::<f64, _>(StandardNormal))
    }
}

pub fn sample_noise(noise: &NoiseModel, seed: u64) -> DVector<f64> {
    noise.sample(&mut substream(seed, streams::NOISE, 0, 0))
}

/// `y = K x + e`
pub fn observe(problem: &LinearProblem, x: &DVector<f64>, noise_draw: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != problem.p() {
        return Err(Error::dim("x", problem.p(), x.len()));
    }
    if noise_draw.len() != problem.n() {
        return Err(Error::dim("noise", problem.n(), noise_draw.len()));
    }
    Ok(problem.k() * x + noise_draw)
}

// ---------------------------------------------------------------------------
// Synthetic problem generator

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub name: String,
    pub size: usize,
    pub mean: f64,
    pub sd: f64,
    /// Lag-one correlation of an AR(1) structure inside the block.
    #[serde(default)]
    pub corr: f64,
    /// Emit non-negativity constraints for this block.
    #[serde(default)]
    pub nonneg: bool,
    /// Prior mean offset in units of `sd`.
    #[serde(default)]
    pub prior_shift_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialSpec {
    pub nx: usize,
    pub ny: usize,
    pub spacing_km: f64,
    pub nu: f64,
    pub rho_km: f64,
}

/// Knobs of the synthetic generator. The whitened operator is
/// `B = U diag(s) V^T` with `s_i = top_singular * decay^(i-1)` and the last
/// `rank_deficiency` values set to `top_singular * 1e-13`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub top_singular: f64,
    pub decay: f64,
    pub rank_deficiency: usize,
    pub blocks: Vec<BlockSpec>,
    /// Half-open index range carrying the functional weights.
    pub h_support: [usize; 2],
    /// The normalised functional lies in the span of the leading
    /// `h_alignment` right singular vectors.
    pub h_alignment: usize,
    /// Couples the functional to one state element: `cos(a) h + sin(a) e_c`
    /// stays in the leading block while `-sin(a) h + cos(a) e_c` is placed at
    /// singular position `coupling_position`. Zero disables the coupling.
    pub coupling_angle: f64,
    pub coupling_index: usize,
    pub coupling_position: usize,
    /// Per-band noise constants; bands split the observations evenly.
    pub band_constants: Vec<f64>,
    pub prior_sd_inflation: f64,
    pub spatial: Option<SpatialSpec>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let block = |name: &str, size, mean, sd, corr, nonneg, shift| BlockSpec {
            name: name.into(),
            size,
            mean,
            sd,
            corr,
            nonneg,
            prior_shift_sd: shift,
        };
        SyntheticSpec {
            n: 200,
            top_singular: 0.4,
            // Condition number 1e9 over the 38 non-null values, so the
            // default rank threshold still separates the null direction.
            decay: 1e-9f64.powf(1.0 / 37.0),
            rank_deficiency: 1,
            blocks: vec![
                block("co2", 20, 400.0, 2.0, 0.8, true, 0.5),
                block("pressure", 1, 1000.0, 3.0, 0.0, true, 1.0),
                block("albedo", 6, 0.2, 0.02, 0.5, false, 0.5),
                block("aerosol", 12, -1.0, 0.3, 0.5, false, -0.5),
            ],
            h_support: [0, 20],
            h_alignment: 4,
            // Ties the functional to the pressure through a weakly observed
            // direction, so pressure knowledge shortens the interval.
            coupling_angle: 0.3,
            coupling_index: 20,
            coupling_position: 5,
            band_constants: vec![0.02, 0.03, 0.025],
            prior_sd_inflation: 1.5,
            spatial: None,
        }
    }
}

impl SyntheticSpec {
    pub fn p(&self) -> usize {
        self.blocks.iter().map(|b| b.size).sum()
    }

    fn validate(&self) -> Result<()> {
        let p = self.p();
        let bad = |field: &str, reason: String| Err(Error::invalid(field, reason));
        if p == 0 || self.blocks.iter().any(|b| b.size == 0) {
            return bad("blocks", "every block needs a positive size".into());
        }
        if self.n < p {
            return bad("n", format!("generator needs n >= p ({} < {p})", self.n));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay", format!("must lie in (0, 1], got {}", self.decay));
        }
        if !(self.top_singular > 0.0 && self.top_singular.is_finite()) {
            return bad("top_singular", "must be positive".into());
        }
        if self.rank_deficiency >= p {
            return bad("rank_deficiency", format!("must be below p = {p}"));
        }
        let [lo, hi] = self.h_support;
        if lo >= hi || hi > p {
            return bad("h_support", format!("[{lo}, {hi}) is not a valid range for p = {p}"));
        }
        let coupled = self.coupling_angle != 0.0;
        let free = p - self.rank_deficiency;
        if self.h_alignment == 0 || self.h_alignment > free - usize::from(coupled) {
            return bad("h_alignment", format!("must lie in 1..={}", free - usize::from(coupled)));
        }
        if coupled {
            if self.coupling_index >= p || (lo..hi).contains(&self.coupling_index) {
                return bad("coupling_index", "must be a state element outside the functional support".into());
            }
            if self.coupling_position < self.h_alignment || self.coupling_position >= free {
                return bad(
                    "coupling_position",
                    format!("must lie in {}..{free}", self.h_alignment),
                );
            }
        }
        if self.band_constants.is_empty() || self.band_constants.iter().any(|&c| !(c > 0.0)) {
            return bad("band_constants", "need at least one positive constant".into());
        }
        if !(self.prior_sd_inflation > 0.0) {
            return bad("prior_sd_inflation", "must be positive".into());
        }
        for b in &self.blocks {
            if !(b.sd >= 0.0) || !(b.corr > -1.0 && b.corr < 1.0) {
                return bad("blocks", format!("block `{}` needs sd >= 0 and |corr| < 1", b.name));
            }
        }
        if let Some(s) = &self.spatial {
            if s.nx == 0 || s.ny == 0 || !(s.spacing_km > 0.0) || !is_supported_nu(s.nu) || !(s.rho_km > 0.0) {
                return bad("spatial", "needs a non-empty grid, positive spacing and range, nu in {0.5, 1.5, 2.5}".into());
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.p());
        for b in &self.blocks {
            if b.size == 1 {
                out.push(b.name.clone());
            } else {
                out.extend((1..=b.size).map(|i| format!("{}_{i}", b.name)));
            }
        }
        out
    }
}

/// Output of [`gen_problem`].
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub problem: LinearProblem,
    pub generative: GenerativeModel,
    pub prior: PriorModel,
    pub noise: NoiseModel,
    pub constraints: ConstraintSet,
    pub spatial: Option<SpatialModel>,
}

/// Haar-distributed `n x k` matrix with orthonormal columns.
pub fn haar_orthonormal(n: usize, k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Orthonormal basis of the complement of the (orthonormal) columns of `f`,
/// drawn uniformly at random.
fn random_complement(f: &DMatrix<f64>, rng: &mut impl Rng) -> DMatrix<f64> {
    let p = f.nrows();
    let k = p - f.ncols();
    let g = DMatrix::from_fn(p, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let proj = &g - f * f.tr_mul(&g);
    // Second projection pass for numerical orthogonality.
    let proj = &proj - f * f.tr_mul(&proj);
    let qr = proj.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn block_covariance(spec: &SyntheticSpec) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let p = spec.p();
    let mut mu = DVector::zeros(p);
    let mut shift = DVector::zeros(p);
    let mut cov = DMatrix::zeros(p, p);
    let mut off = 0;
    for b in &spec.blocks {
        for i in 0..b.size {
            mu[off + i] = b.mean;
            shift[off + i] = b.prior_shift_sd * b.sd;
            for j in 0..b.size {
                cov[(off + i, off + j)] = b.sd * b.sd * b.corr.powi((i as i32 - j as i32).abs());
            }
        }
        off += b.size;
    }
    (mu, cov, shift)
}

/// Build a synthetic problem together with its generative law and a
/// deliberately misspecified prior.
pub fn gen_problem(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticProblem> {
    spec.validate()?;
    let mut rng = substream(seed, streams::GENERATOR, 0, 0);
    let p = spec.p();
    let n = spec.n;
    let d = spec.rank_deficiency;

    let h = boundary_halved_average(p, spec.h_support[0]..spec.h_support[1])?;
    let h_hat = &h / h.norm();

    // Right singular vectors, in singular-value order.
    let m = spec.h_alignment;
    let v = if spec.coupling_angle != 0.0 {
        let (s, c) = spec.coupling_angle.sin_cos();
        let e = DVector::from_fn(p, |i, _| if i == spec.coupling_index { 1.0 } else { 0.0 });
        let a1 = &h_hat * c + &e * s;
        let a2 = &h_hat * (-s) + &e * c;
        let fixed = DMatrix::from_columns(&[a1.clone(), a2.clone()]);
        let rest = random_complement(&fixed, &mut rng);
        let mut top_cols = vec![a1];
        top_cols.extend((0..m - 1).map(|j| rest.column(j).into_owned()));
        let top = DMatrix::from_columns(&top_cols) * haar_orthonormal(m, m, &mut rng);
        let bottom_src = rest.columns(m - 1, p - m - 1).into_owned();
        let bottom = &bottom_src * haar_orthonormal(p - m - 1, p - m - 1, &mut rng);
        let mut cols: Vec<DVector<f64>> = top.column_iter().map(|c| c.into_owned()).collect();
        let mut it = bottom.column_iter();
        for pos in m..p {
            if pos == spec.coupling_position {
                cols.push(a2.clone());
            } else {
                cols.push(it.next().expect("column count").into_owned());
            }
        }
        DMatrix::from_columns(&cols)
    } else {
        let fixed = DMatrix::from_columns(&[h_hat.clone()]);
        let rest = random_complement(&fixed, &mut rng);
        let mut top_cols = vec![h_hat.clone()];
        top_cols.extend((0..m - 1).map(|j| rest.column(j).into_owned()));
        let top = DMatrix::from_columns(&top_cols) * haar_orthonormal(m, m, &mut rng);
        let bottom = rest.columns(m - 1, p - m).into_owned() * haar_orthonormal(p - m, p - m, &mut rng);
        let cols: Vec<DVector<f64>> = top.column_iter().chain(bottom.column_iter()).map(|c| c.into_owned()).collect();
        DMatrix::from_columns(&cols)
    };

    let sigma = DVector::from_fn(p, |i, _| {
        if i >= p - d {
            spec.top_singular * 1e-13
        } else {
            spec.top_singular * spec.decay.powi(i as i32)
        }
    });
    let u = haar_orthonormal(n, p, &mut rng);
    let mut b = &u * DMatrix::from_diagonal(&sigma) * v.transpose();

    let (mu_x, sigma_x, shift) = block_covariance(spec);
    // Orient rows so that the noise-free signal is positive.
    let bmu = &b * &mu_x;
    for j in 0..n {
        if bmu[j] < 0.0 {
            b.row_mut(j).neg_mut();
        }
    }
    let bmu = bmu.abs();

    // With K = diag(sd) B and sd_j = c_b (B mu)_j the noise variance equals
    // c_b times the mean signal K mu, as the noise model requires.
    let nb = spec.band_constants.len();
    let band_of: Vec<usize> = (0..n).map(|j| (j * nb / n).min(nb - 1)).collect();
    let raw_signal = DVector::from_fn(n, |j, _| spec.band_constants[band_of[j]] * bmu[j] * bmu[j]);
    let noise = NoiseModel::new(band_of, spec.band_constants.clone(), raw_signal)?;
    let mut k = b;
    for (j, mut row) in k.row_iter_mut().enumerate() {
        row *= noise.sd()[j];
    }

    let problem = LinearProblem::with_labels(k, noise.covariance(), h, Some(spec.labels()))?;
    let generative = GenerativeModel::new(mu_x.clone(), sigma_x.clone())?;
    let infl = spec.prior_sd_inflation;
    let prior = PriorModel::new(&mu_x + &shift, &sigma_x * (infl * infl))?;

    let mut descriptors = Vec::new();
    let mut off = 0;
    for blk in &spec.blocks {
        if blk.nonneg {
            descriptors.extend((off..off + blk.size).map(Descriptor::NonNegative));
        }
        off += blk.size;
    }
    let constraints = ConstraintSet::from_descriptors(p, descriptors)?;

    let spatial = match &spec.spatial {
        Some(s) => Some(SpatialModel::isotropic(
            SpatialModel::grid_locations(s.nx, s.ny, s.spacing_km),
            s.nu,
            s.rho_km,
            generative.clone(),
        )?),
        None => None,
    };

    Ok(SyntheticProblem {
        problem,
        generative,
        prior,
        noise,
        constraints,
        spatial,
    })
}

// ---------------------------------------------------------------------------
// Interchange

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialFile {
    pub locations: Vec<[f64; 2]>,
    pub nu: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
}

/// `generative.json`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerativeFile {
    pub mu_x: Vec<f64>,
    pub sigma_x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<SpatialFile>,
}

impl GenerativeFile {
    pub fn from_models(generative: &GenerativeModel, spatial: Option<&SpatialModel>) -> Self {
        GenerativeFile {
            mu_x: generative.mu_x.iter().copied().collect(),
            sigma_x: linalg::to_rows(&generative.sigma_x),
            spatial: spatial.map(|s| SpatialFile {
                locations: s.locations.clone(),
                nu: linalg::to_rows(&s.nu),
                rho: linalg::to_rows(&s.rho),
            }),
        }
    }

    pub fn into_models(self) -> Result<(GenerativeModel, Option<SpatialModel>)> {
        let p = self.mu_x.len();
        let sigma = linalg::from_rows("sigma_x", &self.sigma_x, p, p)?;
        let generative = GenerativeModel::new(DVector::from_vec(self.mu_x), sigma)?;
        let spatial = match self.spatial {
            Some(s) => Some(SpatialModel::new(
                s.locations,
                linalg::from_rows("spatial.nu", &s.nu, p, p)?,
                linalg::from_rows("spatial.rho", &s.rho, p, p)?,
                generative.clone(),
            )?),
            None => None,
        };
        Ok((generative, spatial))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spectral_summary;

    #[test]
    fn point_mass_returns_mean() {
        let g = GenerativeModel::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(sample_state(&g, 5), g.mu_x);
    }

    #[test]
    fn state_moments() {
        let sx = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0, 0.5, 1.0]);
        let g = GenerativeModel::new(DVector::from_vec(vec![1.0, -2.0, 3.0]), sx.clone()).unwrap();
        let s = g.sampler();
        let mut rng = substream(1, streams::STATE, 0, 0);
        let draws = 100_000;
        let mut mean = DVector::zeros(3);
        let mut second = DMatrix::zeros(3, 3);
        for _ in 0..draws {
            let x = s.sample(&mut rng);
            mean += &x;
            second += &x * x.transpose();
        }
        mean /= draws as f64;
        let cov = second / draws as f64 - &mean * mean.transpose();
        for i in 0..3 {
            assert!((mean[i] - g.mu_x[i]).abs() <= 4.0 * (sx[(i, i)] / draws as f64).sqrt());
        }
        assert!((cov - &sx).norm() <= 0.05 * sx.norm());
    }

    #[test]
    fn matern_closed_forms() {
        assert_eq!(matern(1.5, 2.0, 0.0), 1.0);
        assert!((matern(0.5, 2.0, 2.0) - (-1f64).exp()).abs() < 1e-15);
        for nu in [0.5, 1.5, 2.5] {
            let mut prev = 1.0;
            for i in 1..50 {
                let v = matern(nu, 3.0, i as f64 * 0.3);
                assert!(v < prev && v > 0.0);
                prev = v;
            }
        }
        // Smoother kernels stay closer to one near the origin.
        assert!(matern(2.5, 1.0, 0.1) > matern(1.5, 1.0, 0.1));
        assert!(matern(1.5, 1.0, 0.1) > matern(0.5, 1.0, 0.1));
    }

    #[test]
    fn single_location_grid_matches_base() {
        let g = GenerativeModel::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2)).unwrap();
        let s = SpatialModel::isotropic(vec![[0.0, 0.0]], 1.5, 10.0, g.clone()).unwrap();
        assert_eq!(s.assemble(), g.sigma_x);
    }

    #[test]
    fn kronecker_factor_reproduces_assembly() {
        let sx = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 2.0, 0.0, 0.0, 0.0, 0.5]);
        let g = GenerativeModel::new(DVector::zeros(3), sx).unwrap();
        let s = SpatialModel::isotropic(SpatialModel::grid_locations(3, 2, 1.0), 1.5, 2.0, g).unwrap();
        let sampler = s.sampler().unwrap();
        let SpatialFactor::Kronecker { sites, state } = &sampler.factor else {
            panic!("isotropic model should use the Kronecker factor");
        };
        let l = sites.kronecker(state);
        assert!((&l * l.transpose() - s.assemble()).abs().max() < 1e-12);
    }

    #[test]
    fn rejects_bad_smoothness() {
        let g = GenerativeModel::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        assert!(SpatialModel::isotropic(vec![[0.0, 0.0]], 1.0, 1.0, g).is_err());
    }

    #[test]
    fn noise_variances_and_floor() {
        let nm = NoiseModel::new(vec![0, 0, 1], vec![2.0, 3.0], DVector::from_vec(vec![1.0, 0.0, 4.0])).unwrap();
        let v = nm.variances();
        assert!((v[0] - 2.0).abs() < 1e-12);
        assert!((v[1] - 2.0 * 4e-6).abs() < 1e-18);
        assert!((v[2] - 12.0).abs() < 1e-12);
        assert!(NoiseModel::new(vec![0], vec![0.0], DVector::from_element(1, 1.0)).is_err());
    }

    #[test]
    fn observe_is_linear() {
        let problem = LinearProblem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            NoiseCovariance::identity(2),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let x1 = DVector::from_vec(vec![1.0, -1.0]);
        let x2 = DVector::from_vec(vec![0.5, 2.0]);
        let e = DVector::from_vec(vec![0.1, 0.2]);
        assert_eq!(observe(&problem, &x1, &DVector::zeros(2)).unwrap(), problem.k() * &x1);
        assert_eq!(observe(&problem, &DVector::zeros(2), &e).unwrap(), e);
        let lhs = observe(&problem, &(&x1 + &x2), &e).unwrap();
        let rhs = observe(&problem, &x1, &e).unwrap() + problem.k() * &x2;
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn generator_shape() {
        let spec = SyntheticSpec::default();
        let sp = gen_problem(&spec, 17).unwrap();
        assert_eq!(sp.problem.p(), 39);
        assert!((sp.problem.h().sum() - 1.0).abs() < 1e-12);
        assert_eq!(sp.problem.h().iter().filter(|&&w| w > 0.0).count(), 20);
        let s = spectral_summary(&sp.problem, 1e-10).unwrap();
        assert_eq!(s.numeric_rank, 38);
        assert!(s.condition_number.is_finite());
        // Noise variance is the band constant times the mean signal.
        let signal = sp.problem.k() * &sp.generative.mu_x;
        let var = sp.noise.variances();
        for j in 0..spec.n {
            let c = spec.band_constants[sp.noise.band_of[j]];
            let want = c * signal[j].max(sp.noise.mean_signal.max() * 1e-6);
            assert!((var[j] - want).abs() <= 1e-9 * want, "row {j}");
        }
        // Functional carries no null-space component.
        let null = s.null_space();
        assert!((null.transpose() * sp.problem.h()).norm() < 1e-10);
        // Deterministic.
        let again = gen_problem(&spec, 17).unwrap();
        assert_eq!(again.problem, sp.problem);
    }

    #[test]
    fn paper_scale_condition() {
        let spec = SyntheticSpec {
            n: 3048,
            decay: 1e-12f64.powf(1.0 / 37.0),
            ..SyntheticSpec::default()
        };
        let sp = gen_problem(&spec, 3).unwrap();
        // A threshold between the designed 1e-12 floor and the 1e-13 null value.
        let s = spectral_summary(&sp.problem, 3e-13).unwrap();
        assert_eq!(s.numeric_rank, 38);
        assert!(s.condition_number > 5e11 && s.condition_number < 2e12);
    }

    #[test]
    fn generator_unit_condition() {
        let spec = SyntheticSpec {
            decay: 1.0,
            rank_deficiency: 0,
            ..SyntheticSpec::default()
        };
        let sp = gen_problem(&spec, 1).unwrap();
        let s = spectral_summary(&sp.problem, 1e-10).unwrap();
        assert!((s.condition_number - 1.0).abs() < 1e-9);
    }

    #[test]
    fn coupled_generator_places_direction() {
        let spec = SyntheticSpec {
            coupling_angle: 0.3,
            ..SyntheticSpec::default()
        };
        let sp = gen_problem(&spec, 4).unwrap();
        let s = spectral_summary(&sp.problem, 1e-10).unwrap();
        let h = sp.problem.h();
        let h_hat = h / h.norm();
        let a2 = &h_hat * (-0.3f64.sin()) + DVector::from_fn(39, |i, _| if i == 20 { 0.3f64.cos() } else { 0.0 });
        let col = s.v.column(spec.coupling_position);
        assert!((col.dot(&a2).abs() - 1.0).abs() < 1e-8);
    }
}
