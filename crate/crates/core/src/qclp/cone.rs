//! Primal-dual interior-point method for one second-order cone plus site
//! boxes, specialised to the structure
//!
//! ```text
//! minimize   q_c·c + q_ρ ρ + q_wᵀ w + q_t t
//! subject to c_i − (L w)_i = 0         (free sites, l_i ≤ c_i ≤ u_i)
//!            (L w)_i = m_i             (fixed sites)
//!            ρ = γ                     (optional)
//!            ‖(w, t)‖ ≤ ρ
//! ```
//!
//! Nesterov-Todd scaling, Mehrotra predictor-corrector and iterative
//! refinement of the Newton system. The reduced system only involves the
//! Gram matrix `L Lᵀ` plus rank-two terms, so no inverse is ever formed.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub refinement_steps: usize,
}

pub(crate) struct ConeProblem<'a> {
    pub l: &'a DMatrix<f64>,
    pub gram: &'a DMatrix<f64>,
    pub lo: &'a [f64],
    pub hi: &'a [f64],
    pub fixed: &'a [bool],
    /// `Some(γ)` pins ρ; `None` leaves ρ free (minimum-norm problems).
    pub gamma: Option<f64>,
    pub obj_c: Option<(usize, f64)>,
    pub obj_rho: f64,
    pub obj_w: Option<&'a DVector<f64>>,
    /// `Some(q_t)` adds the scalar t to the cone.
    pub obj_t: Option<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct ConeSolution {
    /// Primal objective, including the constant from a fixed objective site.
    pub value: f64,
    pub w: DVector<f64>,
    pub t: f64,
    pub iterations: usize,
    pub residual: f64,
    pub gap: f64,
    pub converged: bool,
}

/// Second-order cone Nesterov-Todd scaling `W = β (2 v vᵀ − J)`.
#[derive(Clone)]
struct SocScaling {
    beta: f64,
    v: DVector<f64>,
}

fn jmul(x: &DVector<f64>) -> DVector<f64> {
    let mut out = -x;
    out[0] = x[0];
    out
}

fn soc_det(u: &DVector<f64>) -> f64 {
    let n1 = u.rows(1, u.len() - 1).norm();
    (u[0] - n1) * (u[0] + n1)
}

impl SocScaling {
    fn identity(n: usize) -> Self {
        let mut v = DVector::zeros(n);
        v[0] = 1.0;
        Self { beta: 1.0, v }
    }

    fn new(s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let sd = soc_det(s);
        let zd = soc_det(z);
        if !(sd > 0.0 && zd > 0.0) {
            return None;
        }
        let sn = sd.sqrt();
        let zn = zd.sqrt();
        let sb = s / sn;
        let zb = z / zn;
        let g = ((1.0 + sb.dot(&zb)) / 2.0).sqrt();
        let wb = (sb + jmul(&zb)) / (2.0 * g);
        let mut v = wb.clone();
        v[0] += 1.0;
        let scale = (2.0 * (wb[0] + 1.0)).sqrt();
        let v = v / scale;
        let beta = (sn / zn).sqrt();
        (beta.is_finite() && v.iter().all(|x| x.is_finite())).then_some(Self { beta, v })
    }

    fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let vx = self.v.dot(x);
        (&self.v * (2.0 * vx) - jmul(x)) * self.beta
    }

    fn inv_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let jv = jmul(&self.v);
        let jvx = jv.dot(x);
        (jv * (2.0 * jvx) - jmul(x)) / self.beta
    }
}

/// Jordan product u ∘ v.
fn circ(u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let n = u.len();
    let mut out = DVector::zeros(n);
    out[0] = u.dot(v);
    for i in 1..n {
        out[i] = u[0] * v[i] + v[0] * u[i];
    }
    out
}

/// Solves λ ∘ x = b for x.
fn diamond(l: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.len();
    let tail = |u: &DVector<f64>, w: &DVector<f64>| -> f64 { (1..n).map(|i| u[i] * w[i]).sum() };
    let x0 = (l[0] * b[0] - tail(l, b)) / soc_det(l);
    let mut out = DVector::zeros(n);
    out[0] = x0;
    for i in 1..n {
        out[i] = (b[i] - x0 * l[i]) / l[0];
    }
    out
}

/// Largest step keeping `u + α du` in the second-order cone.
fn soc_step(u: &DVector<f64>, du: &DVector<f64>) -> f64 {
    let n = u.len();
    let tail = |a: &DVector<f64>, b: &DVector<f64>| -> f64 { (1..n).map(|i| a[i] * b[i]).sum() };
    let a = du[0] * du[0] - tail(du, du);
    let b = 2.0 * (u[0] * du[0] - tail(u, du));
    let c = soc_det(u);
    let mut best = f64::INFINITY;
    if a.abs() > 1e-300 {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for r in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                if r > 0.0 {
                    best = best.min(r);
                }
            }
        }
    } else if b < 0.0 {
        best = best.min(-c / b);
    }
    if du[0] < 0.0 {
        best = best.min(-u[0] / du[0]);
    }
    best
}

struct Layout {
    d: usize,
    free: Vec<usize>,
    nr: usize,
    nq: usize,
    nx: usize,
    ny: usize,
    nl: usize,
    has_t: bool,
    rho_row: bool,
}

enum ReducedFactor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl ReducedFactor {
    fn solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            ReducedFactor::Chol(c) => Some(c.solve(b)),
            ReducedFactor::Lu(lu) => lu.solve(b),
        }
    }
}

struct Scaling {
    wl: DVector<f64>,
    soc: SocScaling,
    factor: ReducedFactor,
}

struct Solver<'a> {
    p: &'a ConeProblem<'a>,
    lay: Layout,
    qv: DVector<f64>,
    b: DVector<f64>,
    h: DVector<f64>,
    objective_offset: f64,
}

impl<'a> Solver<'a> {
    fn new(p: &'a ConeProblem<'a>) -> Self {
        let d = p.l.nrows();
        let free: Vec<usize> = (0..d).filter(|&i| !p.fixed[i]).collect();
        let nr = free.len();
        let has_t = p.obj_t.is_some();
        let nq = 1 + d + usize::from(has_t);
        let rho_row = p.gamma.is_some();
        let lay = Layout {
            d,
            nr,
            nq,
            nx: nr + nq,
            ny: d + usize::from(rho_row),
            nl: 2 * nr,
            has_t,
            rho_row,
            free,
        };
        let mut qv = DVector::zeros(lay.nx);
        let mut objective_offset = 0.0;
        if let Some((site, coef)) = p.obj_c {
            match lay.free.iter().position(|&i| i == site) {
                Some(j) => qv[j] = coef,
                None => objective_offset = coef * 0.5 * (p.lo[site] + p.hi[site]),
            }
        }
        qv[nr] = p.obj_rho;
        if let Some(ow) = p.obj_w {
            qv.rows_mut(nr + 1, d).copy_from(ow);
        }
        if let Some(ot) = p.obj_t {
            qv[nr + 1 + d] = ot;
        }
        let mut b = DVector::zeros(lay.ny);
        for i in 0..d {
            if p.fixed[i] {
                b[i] = -0.5 * (p.lo[i] + p.hi[i]);
            }
        }
        if let Some(g) = p.gamma {
            b[d] = g;
        }
        let mut h = DVector::zeros(lay.nl + nq);
        for (j, &i) in lay.free.iter().enumerate() {
            h[j] = p.hi[i];
            h[nr + j] = -p.lo[i];
        }
        Self {
            p,
            lay,
            qv,
            b,
            h,
            objective_offset,
        }
    }

    fn w_of<'v>(&self, x: &'v DVector<f64>) -> nalgebra::DVectorView<'v, f64> {
        x.rows(self.lay.nr + 1, self.lay.d)
    }

    fn a_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let lay = &self.lay;
        let mut r = DVector::zeros(lay.ny);
        let lw = self.p.l * self.w_of(x);
        r.rows_mut(0, lay.d).copy_from(&(-lw));
        for (j, &i) in lay.free.iter().enumerate() {
            r[i] += x[j];
        }
        if lay.rho_row {
            r[lay.d] = x[lay.nr];
        }
        r
    }

    fn at_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let lay = &self.lay;
        let mut x = DVector::zeros(lay.nx);
        for (j, &i) in lay.free.iter().enumerate() {
            x[j] = y[i];
        }
        let lty = self.p.l.tr_mul(&y.rows(0, lay.d));
        x.rows_mut(lay.nr + 1, lay.d).copy_from(&(-lty));
        if lay.rho_row {
            x[lay.nr] = y[lay.d];
        }
        x
    }

    fn g_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let lay = &self.lay;
        let mut out = DVector::zeros(lay.nl + lay.nq);
        for j in 0..lay.nr {
            out[j] = x[j];
            out[lay.nr + j] = -x[j];
        }
        for k in 0..lay.nq {
            out[lay.nl + k] = -x[lay.nr + k];
        }
        out
    }

    fn gt_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        let lay = &self.lay;
        let mut x = DVector::zeros(lay.nx);
        for j in 0..lay.nr {
            x[j] = z[j] - z[lay.nr + j];
        }
        for k in 0..lay.nq {
            x[lay.nr + k] = -z[lay.nl + k];
        }
        x
    }

    /// A_q u for u in cone coordinates (ρ, w, t).
    fn aq_mul(&self, u: &DVector<f64>) -> DVector<f64> {
        let lay = &self.lay;
        let mut r = DVector::zeros(lay.ny);
        let lw = self.p.l * u.rows(1, lay.d);
        r.rows_mut(0, lay.d).copy_from(&(-lw));
        if lay.rho_row {
            r[lay.d] = u[0];
        }
        r
    }

    fn aqt_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let lay = &self.lay;
        let mut u = DVector::zeros(lay.nq);
        let lty = self.p.l.tr_mul(&y.rows(0, lay.d));
        u.rows_mut(1, lay.d).copy_from(&(-lty));
        if lay.rho_row {
            u[0] = y[lay.d];
        }
        u
    }

    fn scaling(&self, wl: DVector<f64>, soc: SocScaling) -> Option<Scaling> {
        let lay = &self.lay;
        let beta2 = soc.beta * soc.beta;
        let a = self.aq_mul(&soc.v);
        let bvec = self.aq_mul(&jmul(&soc.v));
        let vv = soc.v.norm_squared();
        let mut m = DMatrix::zeros(lay.ny, lay.ny);
        m.view_mut((0, 0), (lay.d, lay.d)).copy_from(self.p.gram);
        if lay.rho_row {
            m[(lay.d, lay.d)] = 1.0;
        }
        for j in 0..lay.ny {
            for i in 0..lay.ny {
                m[(i, j)] += 4.0 * vv * a[i] * a[j] - 2.0 * (a[i] * bvec[j] + bvec[i] * a[j]);
            }
        }
        m *= beta2;
        for (j, &i) in lay.free.iter().enumerate() {
            let dc = 1.0 / (wl[j] * wl[j]) + 1.0 / (wl[lay.nr + j] * wl[lay.nr + j]);
            m[(i, i)] += 1.0 / dc;
        }
        let factor = match nalgebra::Cholesky::new(m.clone()) {
            Some(c) => ReducedFactor::Chol(c),
            None => ReducedFactor::Lu(m.lu()),
        };
        Some(Scaling { wl, soc, factor })
    }

    fn w2(&self, sc: &Scaling, u: &DVector<f64>) -> DVector<f64> {
        sc.soc.mul(&sc.soc.mul(u))
    }

    /// (WᵀW)⁻¹ u over the full inequality vector.
    fn ww_inv(&self, sc: &Scaling, u: &DVector<f64>) -> DVector<f64> {
        let nl = self.lay.nl;
        let mut out = DVector::zeros(u.len());
        for k in 0..nl {
            out[k] = u[k] / (sc.wl[k] * sc.wl[k]);
        }
        let tail = sc.soc.inv_mul(&sc.soc.inv_mul(&u.rows(nl, self.lay.nq).into_owned()));
        out.rows_mut(nl, self.lay.nq).copy_from(&tail);
        out
    }

    fn ww(&self, sc: &Scaling, u: &DVector<f64>) -> DVector<f64> {
        let nl = self.lay.nl;
        let mut out = DVector::zeros(u.len());
        for k in 0..nl {
            out[k] = u[k] * sc.wl[k] * sc.wl[k];
        }
        let tail = self.w2(sc, &u.rows(nl, self.lay.nq).into_owned());
        out.rows_mut(nl, self.lay.nq).copy_from(&tail);
        out
    }

    /// Scaled inequality map W u.
    fn w_full(&self, sc: &Scaling, u: &DVector<f64>) -> DVector<f64> {
        let nl = self.lay.nl;
        let mut out = DVector::zeros(u.len());
        for k in 0..nl {
            out[k] = u[k] * sc.wl[k];
        }
        let tail = sc.soc.mul(&u.rows(nl, self.lay.nq).into_owned());
        out.rows_mut(nl, self.lay.nq).copy_from(&tail);
        out
    }

    /// Solves `Aᵀdy + Gᵀdz = bx, A dx = by, G dx − WᵀW dz = bz` once.
    fn kkt0(
        &self,
        sc: &Scaling,
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bz: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let lay = &self.lay;
        let rh = bx + self.gt_mul(&self.ww_inv(sc, bz));
        let dcs: Vec<f64> = (0..lay.nr)
            .map(|j| 1.0 / (sc.wl[j] * sc.wl[j]) + 1.0 / (sc.wl[lay.nr + j] * sc.wl[lay.nr + j]))
            .collect();
        let rq = rh.rows(lay.nr, lay.nq).into_owned();
        let mut rhs = -by;
        for (j, &i) in lay.free.iter().enumerate() {
            rhs[i] += rh[j] / dcs[j];
        }
        rhs += self.aq_mul(&self.w2(sc, &rq));
        let dy = sc.factor.solve(&rhs)?;
        let mut dx = DVector::zeros(lay.nx);
        for (j, &i) in lay.free.iter().enumerate() {
            dx[j] = (rh[j] - dy[i]) / dcs[j];
        }
        let dq = self.w2(sc, &(rq - self.aqt_mul(&dy)));
        dx.rows_mut(lay.nr, lay.nq).copy_from(&dq);
        let dz = self.ww_inv(sc, &(self.g_mul(&dx) - bz));
        Some((dx, dy, dz))
    }

    fn kkt(
        &self,
        sc: &Scaling,
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bz: &DVector<f64>,
        refine: usize,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let (mut dx, mut dy, mut dz) = self.kkt0(sc, bx, by, bz)?;
        for _ in 0..refine {
            let ex = bx - self.at_mul(&dy) - self.gt_mul(&dz);
            let ey = by - self.a_mul(&dx);
            let ez = bz - (self.g_mul(&dx) - self.ww(sc, &dz));
            let (a, b, c) = self.kkt0(sc, &ex, &ey, &ez)?;
            dx += a;
            dy += b;
            dz += c;
        }
        Some((dx, dy, dz))
    }

    fn shift(&self, u: &mut DVector<f64>) {
        let nl = self.lay.nl;
        let mut a = f64::NEG_INFINITY;
        for k in 0..nl {
            a = a.max(-u[k]);
        }
        let tail = u.rows(nl + 1, self.lay.nq - 1).norm();
        a = a.max(tail - u[nl]);
        if a >= 0.0 {
            for k in 0..nl {
                u[k] += 1.0 + a;
            }
            u[nl] += 1.0 + a;
        }
    }

    fn step_length(&self, u: &DVector<f64>, du: &DVector<f64>) -> f64 {
        let nl = self.lay.nl;
        let mut a = f64::INFINITY;
        for k in 0..nl {
            if du[k] < 0.0 {
                a = a.min(-u[k] / du[k]);
            }
        }
        let uq = u.rows(nl, self.lay.nq).into_owned();
        let duq = du.rows(nl, self.lay.nq).into_owned();
        a.min(soc_step(&uq, &duq))
    }

    /// Jordan product over the product cone.
    fn circ_full(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let nl = self.lay.nl;
        let mut out = DVector::zeros(u.len());
        for k in 0..nl {
            out[k] = u[k] * v[k];
        }
        let tail = circ(&u.rows(nl, self.lay.nq).into_owned(), &v.rows(nl, self.lay.nq).into_owned());
        out.rows_mut(nl, self.lay.nq).copy_from(&tail);
        out
    }

    fn diamond_full(&self, l: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let nl = self.lay.nl;
        let mut out = DVector::zeros(l.len());
        for k in 0..nl {
            out[k] = b[k] / l[k];
        }
        let tail = diamond(&l.rows(nl, self.lay.nq).into_owned(), &b.rows(nl, self.lay.nq).into_owned());
        out.rows_mut(nl, self.lay.nq).copy_from(&tail);
        out
    }

    fn extract(&self, x: &DVector<f64>, iterations: usize, residual: f64, gap: f64, converged: bool) -> ConeSolution {
        let lay = &self.lay;
        ConeSolution {
            value: self.qv.dot(x) + self.objective_offset,
            w: self.w_of(x).into_owned(),
            t: if lay.has_t { x[lay.nr + 1 + lay.d] } else { 0.0 },
            iterations,
            residual,
            gap,
            converged,
        }
    }

    fn run(&self, cfg: &IpmSettings) -> ConeSolution {
        let lay = &self.lay;
        let nl = lay.nl;
        let nq = lay.nq;
        let refine = cfg.refinement_steps;
        let Some(sc0) = self.scaling(DVector::from_element(nl, 1.0), SocScaling::identity(nq)) else {
            return self.extract(&DVector::zeros(lay.nx), 0, f64::INFINITY, f64::NAN, false);
        };
        let zero_x = DVector::zeros(lay.nx);
        let zero_y = DVector::zeros(lay.ny);
        let zero_z = DVector::zeros(nl + nq);
        let Some((mut x, _, _)) = self.kkt(&sc0, &zero_x, &self.b, &self.h, refine) else {
            return self.extract(&zero_x, 0, f64::INFINITY, f64::NAN, false);
        };
        let mut s = &self.h - self.g_mul(&x);
        let Some((_, mut y, mut z)) = self.kkt(&sc0, &(-&self.qv), &zero_y, &zero_z, refine) else {
            return self.extract(&x, 0, f64::INFINITY, f64::NAN, false);
        };
        self.shift(&mut s);
        self.shift(&mut z);

        let bh_norm = (self.b.norm_squared() + self.h.norm_squared()).sqrt().max(1.0);
        let q_norm = self.qv.norm().max(1.0);
        let mut best: Option<(f64, ConeSolution)> = None;
        let mut e = DVector::zeros(nl + nq);
        for k in 0..=nl {
            e[k] = 1.0;
        }

        let mut ran = 0;
        for it in 0..cfg.max_iterations {
            ran = it;
            let rx = &self.qv + self.at_mul(&y) + self.gt_mul(&z);
            let ry = self.a_mul(&x) - &self.b;
            let rz = self.g_mul(&x) + &s - &self.h;
            let gap = s.dot(&z);
            let pobj = self.qv.dot(&x);
            let dobj = -self.b.dot(&y) - self.h.dot(&z);
            let pres = ry.norm().max(rz.norm()) / bh_norm;
            let dres = rx.norm() / q_norm;
            let rel_gap = gap.min((pobj - dobj).abs()) / pobj.abs().max(1.0);
            if ![pres, dres, gap, pobj].iter().all(|v| v.is_finite()) {
                break;
            }
            let merit = pres.max(dres).max(rel_gap);
            if best.as_ref().is_none_or(|(m, _)| merit < *m) {
                best = Some((merit, self.extract(&x, it, pres.max(dres), pobj - dobj, false)));
            }
            let tol = cfg.tolerance;
            if pres < tol && dres < tol && (gap < tol || (pobj - dobj).abs() < tol * pobj.abs().max(1.0)) {
                return self.extract(&x, it, pres.max(dres), pobj - dobj, true);
            }

            let mut wl = DVector::zeros(nl);
            for k in 0..nl {
                wl[k] = (s[k] / z[k]).sqrt();
            }
            let Some(soc) = SocScaling::new(&s.rows(nl, nq).into_owned(), &z.rows(nl, nq).into_owned()) else {
                break;
            };
            let Some(sc) = self.scaling(wl, soc) else { break };
            let lam = self.w_full(&sc, &z);
            let mu = gap / (nl + 1) as f64;

            let direction = |bs: &DVector<f64>| {
                let lb = self.diamond_full(&lam, bs);
                let wtlb = self.w_full(&sc, &lb);
                let (dx, dy, dz) = self.kkt(&sc, &(-&rx), &(-&ry), &(-&rz - wtlb), refine)?;
                let wdz = self.w_full(&sc, &dz);
                let ds_scaled = lb - &wdz;
                let ds = self.w_full(&sc, &ds_scaled);
                Some((dx, dy, dz, ds, ds_scaled, wdz))
            };

            let lamlam = self.circ_full(&lam, &lam);
            let Some((_, _, dz_a, ds_a, dss_a, wdz_a)) = direction(&(-&lamlam)) else { break };
            let alpha_aff = self.step_length(&s, &ds_a).min(self.step_length(&z, &dz_a)).min(1.0);
            let sigma = (1.0 - alpha_aff).powi(3);
            let corr = self.circ_full(&dss_a, &wdz_a);
            let rhs = -&lamlam - corr + &e * (sigma * mu);
            let Some((dx, dy, dz, ds, _, _)) = direction(&rhs) else { break };
            let alpha = (0.99 * self.step_length(&s, &ds).min(self.step_length(&z, &dz))).min(1.0);
            if !(alpha > 0.0) {
                break;
            }
            x += &dx * alpha;
            y += &dy * alpha;
            z += &dz * alpha;
            s += &ds * alpha;
        }
        match best {
            Some((_, mut sol)) => {
                sol.iterations = ran;
                sol
            }
            None => self.extract(&x, ran, f64::INFINITY, f64::NAN, false),
        }
    }
}

pub(crate) fn solve(p: &ConeProblem<'_>, cfg: &IpmSettings) -> ConeSolution {
    Solver::new(p).run(cfg)
}
