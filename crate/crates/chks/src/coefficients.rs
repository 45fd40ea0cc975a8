//! Model coefficients: mobilities, proliferation sources, the logistic
//! nutrient reaction, and parameter validation.
//!
//! The moving parts and the bounds they are built to satisfy:
//!
//! ```text
//! S(phi, sigma) = -m phi + h(phi, sigma),          |h| <= H,  H/m < 1
//! b(phi, sigma) = beta(phi) (k0 sigma - ki sigma^p),  p in (1, 2]
//! beta: plateau B on [-3/2, 3/2], linear to 0 at |phi| = 2  (so b0 <= beta there)
//! mobilities:  0 < m0 <= m(phi,sigma), n(phi,sigma) <= M,  |d/dphi n| <= M
//! N(phi, sigma) = integral_0^sigma n(phi, s) ds,   m0 sigma <= N <= M sigma
//! ```
//!
//! Every built-in mobility shape carries a closed-form primitive `N` and
//! phase derivative `n1 = d/dphi N`, so the chain identity
//! `grad N = n grad sigma + n1 grad phi` can be checked directly and the
//! entropy-dissipation diagnostics never need quadrature.

use crate::error::{Error, Result};

/// Proliferation offset `h`: constant, or a bounded bilinear table of
/// `(phi, sigma)` whose sup-norm is computed at construction (it enters the
/// compatibility check `sup|h| < m` and the mean-field envelope).
#[derive(Clone, Debug)]
pub enum HSpec {
    Constant(f64),
    Table(HTable),
}

/// Bilinear interpolation on a rectangular sample grid, clamped outside the
/// sampled range so the function stays bounded on all of the plane.
#[derive(Clone, Debug)]
pub struct HTable {
    phi_points: Vec<f64>,
    sigma_points: Vec<f64>,
    /// Row-major: values[is * phi_points.len() + ip].
    values: Vec<f64>,
    sup_abs: f64,
}

impl HTable {
    pub fn new(phi_points: Vec<f64>, sigma_points: Vec<f64>, values: Vec<f64>) -> Result<HTable> {
        if phi_points.len() < 2
            || sigma_points.len() < 2
            || values.len() != phi_points.len() * sigma_points.len()
        {
            return Err(Error::Output("h table shape mismatch".into()));
        }
        for w in phi_points.windows(2).chain(sigma_points.windows(2)) {
            if !(w[1] > w[0]) {
                return Err(Error::Output("h table sample points must be strictly increasing".into()));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Output("h table holds a non-finite value".into()));
        }
        let sup_abs = values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        Ok(HTable { phi_points, sigma_points, values, sup_abs })
    }

    fn bracket(points: &[f64], x: f64) -> (usize, f64) {
        if x <= points[0] {
            return (0, 0.0);
        }
        if x >= points[points.len() - 1] {
            return (points.len() - 2, 1.0);
        }
        let k = points.partition_point(|&p| p <= x) - 1;
        let k = k.min(points.len() - 2);
        let t = (x - points[k]) / (points[k + 1] - points[k]);
        (k, t)
    }

    pub fn eval(&self, phi: f64, sigma: f64) -> f64 {
        let np = self.phi_points.len();
        let (ip, tp) = Self::bracket(&self.phi_points, phi);
        let (is, ts) = Self::bracket(&self.sigma_points, sigma);
        let v00 = self.values[is * np + ip];
        let v01 = self.values[is * np + ip + 1];
        let v10 = self.values[(is + 1) * np + ip];
        let v11 = self.values[(is + 1) * np + ip + 1];
        (1.0 - ts) * ((1.0 - tp) * v00 + tp * v01) + ts * ((1.0 - tp) * v10 + tp * v11)
    }
}

impl HSpec {
    pub fn eval(&self, phi: f64, sigma: f64) -> f64 {
        match self {
            HSpec::Constant(v) => *v,
            HSpec::Table(t) => t.eval(phi, sigma),
        }
    }

    /// `H = sup |h|` (exact for the table: bilinear interpolation attains its
    /// extrema at sample points; clamping never exceeds them).
    pub fn sup_abs(&self) -> f64 {
        match self {
            HSpec::Constant(v) => v.abs(),
            HSpec::Table(t) => t.sup_abs,
        }
    }
}

/// Built-in mobility shapes. All are bounded between positive constants and
/// globally Lipschitz by construction; `bounds()` reports the actual
/// constants, including the phase-derivative bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MobilityKind {
    /// Constant mobility `c`.
    Constant(f64),
    /// `m0 + gain * sigma / (1 + sigma)`: saturating nutrient enhancement,
    /// no phase dependence.
    NutrientSaturating { m0: f64, gain: f64 },
    /// `m0 + gain * (1 - phi^2)_+ * sigma / (1 + sigma)`: enhanced inside the
    /// diffuse interface, base value in the pure phases.
    PhaseGated { m0: f64, gain: f64 },
}

impl MobilityKind {
    pub fn eval(&self, phi: f64, sigma: f64) -> f64 {
        let s = sigma.max(0.0);
        match *self {
            MobilityKind::Constant(c) => c,
            MobilityKind::NutrientSaturating { m0, gain } => m0 + gain * s / (1.0 + s),
            MobilityKind::PhaseGated { m0, gain } => {
                m0 + gain * (1.0 - phi * phi).max(0.0) * s / (1.0 + s)
            }
        }
    }

    /// `(m0, M)` with `M` covering both the upper mobility bound and the
    /// phase-derivative bound, so the single-constant forms of the bounds
    /// hold verbatim.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            MobilityKind::Constant(c) => (c, c),
            MobilityKind::NutrientSaturating { m0, gain } => (m0, m0 + gain),
            MobilityKind::PhaseGated { m0, gain } => (m0, (m0 + gain).max(2.0 * gain)),
        }
    }

    /// Lipschitz constant for the primitive estimate
    /// `|N(p1,s1) - N(p2,s2)| <= L |s1 - s2| + L s2 |p1 - p2|`.
    pub fn lipschitz(&self) -> f64 {
        self.bounds().1
    }

    /// Primitive `N(phi, sigma) = integral_0^sigma eval(phi, s) ds`
    /// (closed form: `integral s/(1+s) = sigma - ln(1+sigma)`).
    pub fn primitive(&self, phi: f64, sigma: f64) -> f64 {
        let s = sigma.max(0.0);
        let sat = s - (1.0 + s).ln();
        match *self {
            MobilityKind::Constant(c) => c * s,
            MobilityKind::NutrientSaturating { m0, gain } => m0 * s + gain * sat,
            MobilityKind::PhaseGated { m0, gain } => {
                m0 * s + gain * (1.0 - phi * phi).max(0.0) * sat
            }
        }
    }

    /// `n1 = d/dphi N` — the phase-gradient weight in
    /// `grad N = n grad sigma + n1 grad phi`.
    pub fn primitive_dphi(&self, phi: f64, sigma: f64) -> f64 {
        let s = sigma.max(0.0);
        match *self {
            MobilityKind::Constant(_) | MobilityKind::NutrientSaturating { .. } => 0.0,
            MobilityKind::PhaseGated { gain, .. } => {
                if phi.abs() < 1.0 {
                    gain * (-2.0 * phi) * (s - (1.0 + s).ln())
                } else {
                    0.0
                }
            }
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            MobilityKind::Constant(c) => format!("constant({c})"),
            MobilityKind::NutrientSaturating { m0, gain } => {
                format!("nutrient_saturating({m0}, {gain})")
            }
            MobilityKind::PhaseGated { m0, gain } => format!("phase_gated({m0}, {gain})"),
        }
    }
}

/// Proliferation-window weight: plateau `cap` on [-3/2, 3/2], linear ramps to
/// zero at |phi| = 2, zero outside. The minimal Lipschitz function meeting
/// the support and floor requirements, with floor `b0 <= cap` on the plateau.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaSpec {
    /// Plateau value B.
    pub cap: f64,
    /// Guaranteed floor b0 on [-3/2, 3/2] (defaults to B).
    pub floor: f64,
}

impl BetaSpec {
    pub fn uniform(cap: f64) -> Self {
        BetaSpec { cap, floor: cap }
    }
}

/// All model coefficients, immutable once validated.
#[derive(Clone, Debug)]
pub struct ModelParams {
    /// Chemotaxis sensitivity (>= 0; several diagnostic regimes set it to 0).
    pub chi: f64,
    /// Interface parameter (0, 1]; the analysis takes 1.
    pub eps: f64,
    /// Mass relaxation rate (>= 0).
    pub m: f64,
    pub h: HSpec,
    /// Logistic growth rate.
    pub kappa0: f64,
    /// Logistic decay rate.
    pub kappa_inf: f64,
    /// Logistic exponent in (1, 2].
    pub p: f64,
    pub beta: BetaSpec,
    /// Phase mobility.
    pub mob_m: MobilityKind,
    /// Nutrient mobility.
    pub mob_n: MobilityKind,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            chi: 0.5,
            eps: 1.0,
            m: 1.0,
            h: HSpec::Constant(0.0),
            kappa0: 1.0,
            kappa_inf: 1.0,
            p: 2.0,
            beta: BetaSpec::uniform(1.0),
            mob_m: MobilityKind::Constant(1.0),
            mob_n: MobilityKind::Constant(1.0),
        }
    }
}

impl ModelParams {
    /// `sup |h|`.
    pub fn sup_h(&self) -> f64 {
        self.h.sup_abs()
    }

    /// Mass source `S(phi, sigma) = -m phi + h(phi, sigma)`.
    pub fn source_s(&self, phi: f64, sigma: f64) -> f64 {
        -self.m * phi + self.h.eval(phi, sigma)
    }

    /// Proliferation window `beta(phi)`.
    pub fn beta(&self, phi: f64) -> f64 {
        let a = phi.abs();
        if a <= 1.5 {
            self.beta.cap
        } else if a < 2.0 {
            self.beta.cap * (2.0 - a) * 2.0
        } else {
            0.0
        }
    }

    /// Logistic nutrient source `b = beta(phi) (k0 sigma - ki sigma^p)`.
    pub fn source_b(&self, phi: f64, sigma: f64) -> Result<f64> {
        let s = nonnegative(sigma, "source_b")?;
        Ok(self.beta(phi) * (self.kappa0 * s - self.kappa_inf * s.powf(self.p)))
    }

    /// Carrying capacity `(k0/ki)^{1/(p-1)}`: the sigma level where the
    /// logistic source changes sign.
    pub fn carrying_capacity(&self) -> f64 {
        (self.kappa0 / self.kappa_inf).powf(1.0 / (self.p - 1.0))
    }

    pub fn mobility_m(&self, phi: f64, sigma: f64) -> f64 {
        self.mob_m.eval(phi, sigma)
    }

    pub fn mobility_n(&self, phi: f64, sigma: f64) -> f64 {
        self.mob_n.eval(phi, sigma)
    }

    /// `N(phi, sigma)`, the primitive of the nutrient mobility in sigma.
    pub fn big_n(&self, phi: f64, sigma: f64) -> Result<f64> {
        let s = nonnegative(sigma, "big_n")?;
        Ok(self.mob_n.primitive(phi, s))
    }

    /// `n1 = d/dphi N(phi, sigma)`.
    pub fn n1(&self, phi: f64, sigma: f64) -> Result<f64> {
        let s = nonnegative(sigma, "n1")?;
        Ok(self.mob_n.primitive_dphi(phi, s))
    }
}

/// Scrub a sigma argument: tiny negative values (below rounding noise of the
/// positivity-preserving solver) clamp to zero, anything worse is an error
/// from upstream that must not be papered over.
fn nonnegative(sigma: f64, context: &'static str) -> Result<f64> {
    if sigma < -1e-14 {
        return Err(Error::NegativeSigma { value: sigma, context });
    }
    Ok(sigma.max(0.0))
}

/// Result of `validate`: one line per violated inequality, both sides
/// evaluated. Empty means the parameter set is accepted.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, msg: String) {
        self.violations.push(msg);
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            write!(f, "accepted")
        } else {
            write!(f, "{}", self.violations.join("\n"))
        }
    }
}

/// Check every standing hypothesis the solver relies on, for space dimension
/// `d`. `strict3d` additionally imposes the small-chemotaxis regime required
/// by the three-dimensional theory (which this code validates but does not
/// simulate).
pub fn validate(params: &ModelParams, d: usize, strict3d: bool) -> ValidationReport {
    let mut rep = ValidationReport::default();
    if !(1..=3).contains(&d) {
        rep.push(format!("space dimension d = {d} outside {{1, 2, 3}}"));
    }
    if params.m < 0.0 {
        rep.push(format!("mass relaxation rate m = {} is negative", params.m));
    }
    let big_h = params.sup_h();
    if params.m == 0.0 {
        if big_h > 0.0 {
            rep.push(format!(
                "source compatibility violated: m = 0 with sup|h| = {big_h} > 0 (conservative case needs h = 0)"
            ));
        }
    } else if big_h / params.m >= 1.0 {
        rep.push(format!(
            "source compatibility violated: sup|h| / m = {} / {} = {} >= 1 (need sup|h| < m)",
            big_h,
            params.m,
            big_h / params.m
        ));
    }
    if params.chi < 0.0 {
        rep.push(format!("chemotaxis coefficient chi = {} is negative", params.chi));
    }
    if !(params.eps > 0.0 && params.eps <= 1.0) {
        rep.push(format!("interface parameter eps = {} outside (0, 1]", params.eps));
    }
    if params.kappa0 <= 0.0 {
        rep.push(format!("logistic growth rate kappa0 = {} must be positive", params.kappa0));
    }
    if params.kappa_inf <= 0.0 {
        rep.push(format!("logistic decay rate kappa_inf = {} must be positive", params.kappa_inf));
    }
    let p_floor = match d {
        2 => 1.5,
        3 => 1.6,
        _ => 1.0,
    };
    let p_ok = params.p > 1.0
        && params.p <= 2.0
        && (d < 2 || params.p >= p_floor);
    if !p_ok {
        match d {
            2 => rep.push(format!(
                "logistic exponent p = {} outside [1.5, 2] (required for d = 2)",
                params.p
            )),
            3 => rep.push(format!(
                "logistic exponent p = {} outside [1.6, 2] (required for d = 3)",
                params.p
            )),
            _ => rep.push(format!("logistic exponent p = {} outside (1, 2]", params.p)),
        }
    }
    if params.beta.cap <= 0.0 {
        rep.push(format!("proliferation plateau B = {} must be positive", params.beta.cap));
    }
    if !(params.beta.floor > 0.0 && params.beta.floor <= params.beta.cap) {
        rep.push(format!(
            "proliferation floor b0 = {} outside (0, B] with B = {}",
            params.beta.floor, params.beta.cap
        ));
    }
    for (name, mob) in [("m", params.mob_m), ("n", params.mob_n)] {
        let (lo, _) = mob.bounds();
        if lo <= 0.0 {
            rep.push(format!("mobility {name} lower bound {lo} must be positive"));
        }
    }
    if strict3d || d == 3 {
        let rhs = (2.0 * params.kappa_inf * params.beta.floor).sqrt();
        if params.chi >= rhs {
            rep.push(format!(
                "chemotaxis smallness violated: chi = {} >= sqrt(2 kappa_inf b0) = {rhs}",
                params.chi
            ));
        }
        if params.mob_n != MobilityKind::Constant(1.0) {
            rep.push(format!(
                "three-dimensional regime requires constant unit nutrient mobility (got {})",
                params.mob_n.describe()
            ));
        }
    }
    rep
}
