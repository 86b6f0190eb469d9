//! Dense primal-dual interior-point solver for small cone programs
//!
//! ```text
//! minimize    c^T x
//! subject to  G x + s = h,   s in K = R_+^l x Q^{q_1} x ... x Q^{q_k}
//! ```
//!
//! with dual `maximize -h^T z` subject to `G^T z + c = 0`, `z in K`.
//! The iteration works on the homogeneous self-dual embedding, so it needs
//! no feasible starting point and returns infeasibility certificates when
//! either problem is infeasible. Directions use Nesterov-Todd scaling and a
//! Mehrotra predictor-corrector; Newton systems are solved through a QR
//! factorisation of the scaled constraint matrix `W^{-1} G`.

use nalgebra::{DMatrix, DVector};

/// Cone dimensions: the nonnegative orthant first, then second-order cones
/// `{(u0, u1) : |u1| <= u0}` in the given sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Cones {
    pub nonneg: usize,
    pub soc: Vec<usize>,
}

impl Cones {
    pub fn dim(&self) -> usize {
        self.nonneg + self.soc.iter().sum::<usize>()
    }

    /// Barrier degree.
    fn degree(&self) -> usize {
        self.nonneg + self.soc.len()
    }

    fn soc_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let mut off = self.nonneg;
        self.soc.iter().map(move |&q| {
            let r = off..off + q;
            off += q;
            r
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub max_iter: usize,
    pub feastol: f64,
    pub abstol: f64,
    pub reltol: f64,
    /// Looser tolerance accepted when progress stalls before the strict one.
    pub near_tol: f64,
    pub refinement: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            max_iter: 200,
            feastol: 1e-9,
            abstol: 1e-9,
            reltol: 1e-9,
            near_tol: 1e-6,
            refinement: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    /// Stopped at the iteration cap or a numerical breakdown but within
    /// `near_tol`.
    NearOptimal,
    /// `z` is a Farkas certificate: `G^T z = 0`, `h^T z = -1`, `z in K`.
    PrimalInfeasible,
    /// `x` is an improving ray: `G x + s = 0`, `c^T x = -1`, `s in K`.
    DualInfeasible,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: Status,
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    pub z: DVector<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub pres: f64,
    pub dres: f64,
    pub gap: f64,
    pub relgap: f64,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        matches!(self.status, Status::Optimal | Status::NearOptimal)
    }
}

// ---------------------------------------------------------------------------
// Cone arithmetic

fn soc_det(u: &[f64]) -> f64 {
    let n1 = norm(&u[1..]);
    (u[0] - n1) * (u[0] + n1)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jordan product `u o v`.
fn jprod(cones: &Cones, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(u.len());
    for i in 0..cones.nonneg {
        out[i] = u[i] * v[i];
    }
    for r in cones.soc_ranges() {
        let (us, vs) = (&u.as_slice()[r.clone()], &v.as_slice()[r.clone()]);
        out[r.start] = dot(us, vs);
        for k in 1..us.len() {
            out[r.start + k] = us[0] * vs[k] + vs[0] * us[k];
        }
    }
    out
}

/// Solve `lambda o u = r` for `u`.
fn jdiv(cones: &Cones, lambda: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(r.len());
    for i in 0..cones.nonneg {
        out[i] = r[i] / lambda[i];
    }
    for rg in cones.soc_ranges() {
        let l = &lambda.as_slice()[rg.clone()];
        let rr = &r.as_slice()[rg.clone()];
        let det = soc_det(l);
        let u0 = (l[0] * rr[0] - dot(&l[1..], &rr[1..])) / det;
        out[rg.start] = u0;
        for k in 1..l.len() {
            out[rg.start + k] = (rr[k] - u0 * l[k]) / l[0];
        }
    }
    out
}

fn identity(cones: &Cones) -> DVector<f64> {
    let mut e = DVector::zeros(cones.dim());
    for i in 0..cones.nonneg {
        e[i] = 1.0;
    }
    for r in cones.soc_ranges() {
        e[r.start] = 1.0;
    }
    e
}

/// Smallest `t` such that `u + t e` lies in the cone (negative when `u` is
/// interior).
fn max_violation(cones: &Cones, u: &DVector<f64>) -> f64 {
    let mut t = f64::NEG_INFINITY;
    for i in 0..cones.nonneg {
        t = t.max(-u[i]);
    }
    for r in cones.soc_ranges() {
        let us = &u.as_slice()[r];
        t = t.max(norm(&us[1..]) - us[0]);
    }
    t
}

/// Largest `a >= 0` keeping `u + a du` in the cone, given interior `u`.
fn max_step(cones: &Cones, u: &DVector<f64>, du: &DVector<f64>) -> f64 {
    let mut amax = f64::INFINITY;
    for i in 0..cones.nonneg {
        if du[i] < 0.0 {
            amax = amax.min(-u[i] / du[i]);
        }
    }
    for r in cones.soc_ranges() {
        let us = &u.as_slice()[r.clone()];
        let ds = &du.as_slice()[r];
        // det(u + a du) = qa a^2 + 2 qb a + qc
        let qa = ds[0] * ds[0] - dot(&ds[1..], &ds[1..]);
        let qb = us[0] * ds[0] - dot(&us[1..], &ds[1..]);
        let qc = soc_det(us);
        let root = smallest_positive_root(qa, qb, qc);
        amax = amax.min(root);
        // The cone's axis also must stay nonnegative.
        if ds[0] < 0.0 {
            amax = amax.min(-us[0] / ds[0]);
        }
    }
    amax
}

/// Smallest positive root of `qa t^2 + 2 qb t + qc` with `qc > 0`.
fn smallest_positive_root(qa: f64, qb: f64, qc: f64) -> f64 {
    if qc <= 0.0 {
        return 0.0;
    }
    if qa == 0.0 {
        return if qb < 0.0 { -qc / (2.0 * qb) } else { f64::INFINITY };
    }
    let disc = qb * qb - qa * qc;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let sq = disc.sqrt();
    // Stable pair of roots: q / qa and qc / q.
    let q = -(qb + qb.signum() * sq);
    let mut best = f64::INFINITY;
    for t in [q / qa, if q != 0.0 { qc / q } else { f64::INFINITY }] {
        if t > 0.0 && t < best {
            best = t;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Nesterov-Todd scaling

#[derive(Debug, Clone)]
struct Scaling {
    /// `W = diag(d)` on the orthant.
    d: Vec<f64>,
    /// `W = eta (2 w w^T - J)` on each second-order cone.
    soc: Vec<(f64, Vec<f64>)>,
}

impl Scaling {
    fn new(cones: &Cones, s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let mut d = Vec::with_capacity(cones.nonneg);
        for i in 0..cones.nonneg {
            if !(s[i] > 0.0 && z[i] > 0.0) {
                return None;
            }
            d.push((s[i] / z[i]).sqrt());
        }
        let mut soc = Vec::with_capacity(cones.soc.len());
        for r in cones.soc_ranges() {
            let ss = &s.as_slice()[r.clone()];
            let zs = &z.as_slice()[r];
            let sd = soc_det(ss);
            let zd = soc_det(zs);
            if !(sd > 0.0 && zd > 0.0 && ss[0] > 0.0 && zs[0] > 0.0) {
                return None;
            }
            let (sn, zn) = (sd.sqrt(), zd.sqrt());
            let sb: Vec<f64> = ss.iter().map(|v| v / sn).collect();
            let zb: Vec<f64> = zs.iter().map(|v| v / zn).collect();
            let gamma = ((1.0 + dot(&sb, &zb)) / 2.0).sqrt();
            let mut w: Vec<f64> = Vec::with_capacity(sb.len());
            w.push((sb[0] + zb[0]) / (2.0 * gamma));
            for k in 1..sb.len() {
                w.push((sb[k] - zb[k]) / (2.0 * gamma));
            }
            // W = eta (2 v v^T - J) with v = (w + e) / sqrt(2 (w0 + 1)).
            let nv = (2.0 * (w[0] + 1.0)).sqrt();
            w[0] += 1.0;
            for wk in w.iter_mut() {
                *wk /= nv;
            }
            soc.push(((sn / zn).sqrt(), w));
        }
        Some(Scaling { d, soc })
    }

    /// `W v`
    fn apply(&self, cones: &Cones, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for i in 0..cones.nonneg {
            out[i] = self.d[i] * v[i];
        }
        for ((eta, w), r) in self.soc.iter().zip(cones.soc_ranges()) {
            let vs = &v.as_slice()[r.clone()];
            let wv = dot(w, vs);
            out[r.start] = eta * (2.0 * w[0] * wv - vs[0]);
            for k in 1..w.len() {
                out[r.start + k] = eta * (2.0 * w[k] * wv + vs[k]);
            }
        }
        out
    }

    /// `W^{-1} v`
    fn apply_inv(&self, cones: &Cones, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for i in 0..cones.nonneg {
            out[i] = v[i] / self.d[i];
        }
        for ((eta, w), r) in self.soc.iter().zip(cones.soc_ranges()) {
            let vs = &v.as_slice()[r.clone()];
            // J w
            let jw0 = w[0];
            let jwv = jw0 * vs[0] - dot(&w[1..], &vs[1..]);
            out[r.start] = (2.0 * jw0 * jwv - vs[0]) / eta;
            for k in 1..w.len() {
                out[r.start + k] = (-2.0 * w[k] * jwv + vs[k]) / eta;
            }
        }
        out
    }

    fn apply_inv_cols(&self, cones: &Cones, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = g.clone();
        for i in 0..cones.nonneg {
            out.row_mut(i).scale_mut(1.0 / self.d[i]);
        }
        for ((eta, w), r) in self.soc.iter().zip(cones.soc_ranges()) {
            // W^{-1} X = (2 (Jw)((Jw)^T X) - J X) / eta
            let mut jw = DVector::from_column_slice(w);
            for k in 1..jw.len() {
                jw[k] = -jw[k];
            }
            let block = g.rows(r.start, r.len());
            let proj = block.tr_mul(&jw);
            let mut ob = out.rows_mut(r.start, r.len());
            ob.row_mut(0).scale_mut(-1.0);
            ob.ger(2.0, &jw, &proj, 1.0);
            ob.scale_mut(1.0 / eta);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Newton systems

/// Factorisation of `[0 G^T; G -W^2]` through `W^{-1} G = Q R`.
struct Kkt<'a> {
    cones: &'a Cones,
    g: &'a DMatrix<f64>,
    scaling: &'a Scaling,
    qr: nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    r: DMatrix<f64>,
    ghat: DMatrix<f64>,
}

impl<'a> Kkt<'a> {
    fn new(cones: &'a Cones, g: &'a DMatrix<f64>, scaling: &'a Scaling) -> Option<Self> {
        let ghat = scaling.apply_inv_cols(cones, g);
        let qr = ghat.clone().qr();
        let r = qr.r();
        if r.diagonal().iter().any(|v| !v.is_finite() || *v == 0.0) {
            return None;
        }
        Some(Kkt {
            cones,
            g,
            scaling,
            qr,
            r,
            ghat,
        })
    }

    fn solve_once(&self, bx: &DVector<f64>, bz: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let nv = self.g.ncols();
        let wbz = self.scaling.apply_inv(self.cones, bz);
        let mut qt = wbz.clone();
        self.qr.q_tr_mul(&mut qt);
        let rt_bx = self
            .r
            .tr_solve_upper_triangular(bx)
            .unwrap_or_else(|| DVector::from_element(nv, f64::NAN));
        let rhs = rt_bx + qt.rows(0, nv);
        let dx = self
            .r
            .solve_upper_triangular(&rhs)
            .unwrap_or_else(|| DVector::from_element(nv, f64::NAN));
        let dz = self.scaling.apply_inv(self.cones, &(&self.ghat * &dx - wbz));
        (dx, dz)
    }

    /// Solve `G^T dz = bx`, `G dx - W^2 dz = bz` with iterative refinement.
    fn solve(&self, bx: &DVector<f64>, bz: &DVector<f64>, refinement: usize) -> (DVector<f64>, DVector<f64>) {
        let (mut dx, mut dz) = self.solve_once(bx, bz);
        for _ in 0..refinement {
            let rx = bx - self.g.tr_mul(&dz);
            let w2dz = self.scaling.apply(self.cones, &self.scaling.apply(self.cones, &dz));
            let rz = bz - (self.g * &dx - w2dz);
            let (ex, ez) = self.solve_once(&rx, &rz);
            dx += ex;
            dz += ez;
        }
        (dx, dz)
    }
}

// ---------------------------------------------------------------------------
// Driver

/// Solve the cone program. `g` must have full column rank.
pub fn solve(c: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>, cones: &Cones, settings: &Settings) -> Solution {
    let (m, nv) = g.shape();
    assert_eq!(m, cones.dim(), "cone dimensions do not match G");
    assert_eq!(c.len(), nv);
    assert_eq!(h.len(), m);

    // Column equilibration: x = D x'.
    let col_scale: Vec<f64> = (0..nv)
        .map(|j| {
            let n = g.column(j).norm();
            if n > 0.0 {
                1.0 / n
            } else {
                1.0
            }
        })
        .collect();
    let mut gs = g.clone();
    for (j, &sc) in col_scale.iter().enumerate() {
        gs.column_mut(j).scale_mut(sc);
    }
    let cs = DVector::from_fn(nv, |j, _| c[j] * col_scale[j]);
    let mut sol = solve_scaled(&cs, &gs, h, cones, settings);
    for j in 0..nv {
        sol.x[j] *= col_scale[j];
    }
    sol
}

fn solve_scaled(c: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>, cones: &Cones, st: &Settings) -> Solution {
    let (m, nv) = g.shape();
    let e = identity(cones);
    let deg = cones.degree() as f64;
    let resx0 = c.norm().max(1.0);
    let resz0 = h.norm().max(1.0);

    let fail = |iterations: usize| Solution {
        status: Status::Stalled,
        x: DVector::from_element(nv, f64::NAN),
        s: DVector::from_element(m, f64::NAN),
        z: DVector::from_element(m, f64::NAN),
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        iterations,
        pres: f64::INFINITY,
        dres: f64::INFINITY,
        gap: f64::INFINITY,
        relgap: f64::INFINITY,
    };

    // Least-squares starting point, shifted into the cone.
    let unit = Scaling::new(cones, &e, &e).expect("identity is interior");
    let (mut x, mut s, mut z) = {
        let Some(kkt) = Kkt::new(cones, g, &unit) else {
            return fail(0);
        };
        let (x0, minus_s) = kkt.solve(&DVector::zeros(nv), h, st.refinement);
        let (_, z0) = kkt.solve(&(-c), &DVector::zeros(m), st.refinement);
        let s0 = -minus_s;
        (x0, s0, z0)
    };
    for v in [&mut s, &mut z] {
        let t = max_violation(cones, v);
        if t >= -1e-8 * v.norm().max(1.0) {
            *v += &e * (1.0 + t);
        }
    }
    let (mut tau, mut kappa) = (1.0_f64, 1.0_f64);

    let mut best: Option<(f64, Solution)> = None;
    let record = |best: &mut Option<(f64, Solution)>, score: f64, sol: Solution| {
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            *best = Some((score, sol));
        }
    };

    for it in 0..=st.max_iter {
        let gtz = g.tr_mul(&z);
        let gx = g * &x;
        let rx = &gtz + c * tau;
        let rz = &gx + &s - h * tau;
        let cx = c.dot(&x);
        let hz = h.dot(&z);
        let rt = kappa + cx + hz;

        let pcost = cx / tau;
        let dcost = -hz / tau;
        let gap = s.dot(&z) / (tau * tau);
        let relgap = if pcost < 0.0 {
            gap / -pcost
        } else if dcost > 0.0 {
            gap / dcost
        } else {
            f64::INFINITY
        };
        let pres = rz.norm() / (resz0 * tau);
        let dres = rx.norm() / (resx0 * tau);
        let pinfres = if hz < 0.0 { gtz.norm() / resx0 / -hz } else { f64::INFINITY };
        let dinfres = if cx < 0.0 { (&gx + &s).norm() / resz0 / -cx } else { f64::INFINITY };

        let make = |status| Solution {
            status,
            x: &x / tau,
            s: &s / tau,
            z: &z / tau,
            primal_objective: pcost,
            dual_objective: dcost,
            iterations: it,
            pres,
            dres,
            gap,
            relgap,
        };

        if pres <= st.feastol && dres <= st.feastol && (gap <= st.abstol || relgap <= st.reltol) {
            return make(Status::Optimal);
        }
        if pinfres <= st.feastol {
            return Solution {
                status: Status::PrimalInfeasible,
                x: DVector::from_element(nv, f64::NAN),
                s: DVector::from_element(m, f64::NAN),
                z: &z / -hz,
                primal_objective: f64::INFINITY,
                dual_objective: f64::INFINITY,
                iterations: it,
                pres: pinfres,
                dres,
                gap,
                relgap,
            };
        }
        if dinfres <= st.feastol {
            return Solution {
                status: Status::DualInfeasible,
                x: &x / -cx,
                s: &s / -cx,
                z: DVector::from_element(m, f64::NAN),
                primal_objective: f64::NEG_INFINITY,
                dual_objective: f64::NEG_INFINITY,
                iterations: it,
                pres,
                dres: dinfres,
                gap,
                relgap,
            };
        }
        let score = pres.max(dres).max(gap.min(relgap));
        if pres <= st.near_tol && dres <= st.near_tol && (gap <= st.near_tol || relgap <= st.near_tol) {
            record(&mut best, score, make(Status::NearOptimal));
        }
        if it == st.max_iter {
            break;
        }

        let Some(scaling) = Scaling::new(cones, &s, &z) else {
            break;
        };
        let lambda = scaling.apply(cones, &z);
        let mu = (s.dot(&z) + tau * kappa) / (deg + 1.0);
        let Some(kkt) = Kkt::new(cones, g, &scaling) else {
            break;
        };
        let (x1, z1) = kkt.solve(c, &(-h), st.refinement);
        let denom = c.dot(&x1) + h.dot(&z1) + kappa / tau;

        // Solve for a direction given the complementarity right-hand sides.
        let direction = |eta: f64, ds_rhs: &DVector<f64>, dk_rhs: f64| {
            let ds_t = jdiv(cones, &lambda, ds_rhs);
            let bx = -(&rx * eta);
            let bz = -(&rz * eta) - scaling.apply(cones, &ds_t);
            let bt = -eta * rt - dk_rhs / tau;
            let (x2, z2) = kkt.solve(&bx, &bz, st.refinement);
            let dtau = (c.dot(&x2) + h.dot(&z2) - bt) / denom;
            let dx = &x2 - &x1 * dtau;
            let dz = &z2 - &z1 * dtau;
            // ds = W (ds_t - W dz)
            let ds = scaling.apply(cones, &(&ds_t - scaling.apply(cones, &dz)));
            let dkappa = (dk_rhs - kappa * dtau) / tau;
            (dx, ds, dz, dtau, dkappa)
        };

        let step_len = |ds: &DVector<f64>, dz: &DVector<f64>, dtau: f64, dkappa: f64| {
            let mut a = max_step(cones, &s, ds).min(max_step(cones, &z, dz));
            if dtau < 0.0 {
                a = a.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-kappa / dkappa);
            }
            a
        };

        // Predictor.
        let ll = jprod(cones, &lambda, &lambda);
        let (_, ds_a, dz_a, dtau_a, dkappa_a) = direction(1.0, &(-&ll), -tau * kappa);
        let alpha_a = step_len(&ds_a, &dz_a, dtau_a, dkappa_a).min(1.0);
        let sigma = (1.0 - alpha_a).powi(3).clamp(0.0, 1.0);

        // Corrector.
        let corr = jprod(
            cones,
            &scaling.apply_inv(cones, &ds_a),
            &scaling.apply(cones, &dz_a),
        );
        let ds_rhs = -&ll + &e * (sigma * mu) - corr;
        let dk_rhs = -tau * kappa + sigma * mu - dtau_a * dkappa_a;
        let (dx, ds, dz, dtau, dkappa) = direction(1.0 - sigma, &ds_rhs, dk_rhs);
        let amax = step_len(&ds, &dz, dtau, dkappa);
        let alpha = (0.99 * amax).min(1.0);
        if !(alpha > 0.0) || !alpha.is_finite() || dx.iter().any(|v| !v.is_finite()) {
            break;
        }

        x += &dx * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        tau += dtau * alpha;
        kappa += dkappa * alpha;
        if !(tau > 0.0 && kappa > 0.0) {
            break;
        }
        // Keep the homogeneous iterate well scaled.
        let scale = tau.max(1e-300);
        if !(1e-8..=1e8).contains(&scale) {
            x /= scale;
            s /= scale;
            z /= scale;
            kappa /= scale;
            tau = 1.0;
        }
    }

    match best {
        Some((_, sol)) => sol,
        None => fail(st.max_iter),
    }
}
