//! abcd width parameterizations: canonical tables, ablations, gauge moves,
//! weight tying and exact stability checks.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact exponent. Serialized as `[numerator, denominator]`.
pub type Rational = Ratio<i64>;

/// Shorthand constructor, `rat(1, 2)` is one half.
pub fn rat(num: i64, den: i64) -> Rational {
    Ratio::new(num, den)
}

/// Integer exponent.
pub fn int(v: i64) -> Rational {
    Ratio::from_integer(v)
}

fn half() -> Rational {
    rat(1, 2)
}

/// `n^e` as a float. The only place exponents leave exact arithmetic.
pub fn pow_width(n: f64, e: Rational) -> f64 {
    if e.is_zero() {
        return 1.0;
    }
    if e.is_integer() {
        return n.powi(e.to_integer() as i32);
    }
    n.powf(*e.numer() as f64 / *e.denom() as f64)
}

pub fn rational_to_f64(e: Rational) -> f64 {
    *e.numer() as f64 / *e.denom() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "SGD")]
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Sgd => write!(f, "SGD"),
            OptimizerKind::Adam => write!(f, "Adam"),
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" | "adamw" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerRole {
    Input,
    Hidden,
    Output,
    LayerNorm,
    AttentionScale,
}

impl LayerRole {
    pub const MATRICES: [LayerRole; 3] = [LayerRole::Input, LayerRole::Hidden, LayerRole::Output];
    pub const ALL: [LayerRole; 5] = [
        LayerRole::Input,
        LayerRole::Hidden,
        LayerRole::Output,
        LayerRole::LayerNorm,
        LayerRole::AttentionScale,
    ];
}

impl fmt::Display for LayerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerRole::Input => "Input",
            LayerRole::Hidden => "Hidden",
            LayerRole::Output => "Output",
            LayerRole::LayerNorm => "LayerNorm",
            LayerRole::AttentionScale => "AttentionScale",
        };
        f.write_str(s)
    }
}

/// Per-role exponents. Inapplicable exponents are `None`, not zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LayerExponents {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Rational>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rational>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Rational>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Rational>,
}

impl LayerExponents {
    pub fn full(a: Rational, b: Rational, c: Rational, d: Rational) -> Self {
        LayerExponents { a: Some(a), b: Some(b), c: Some(c), d: Some(d) }
    }

    pub fn lr_only(c: Rational) -> Self {
        LayerExponents { c: Some(c), ..Default::default() }
    }

    pub fn mult_only(a: Rational) -> Self {
        LayerExponents { a: Some(a), ..Default::default() }
    }

    pub fn is_full(&self) -> bool {
        self.a.is_some() && self.b.is_some() && self.c.is_some() && self.d.is_some()
    }
}

/// A named width parameterization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub optimizer: OptimizerKind,
    pub weight_tied: bool,
    /// Input, Hidden, Output and LayerNorm. The attention scale lives in
    /// `attn_exponent`.
    pub layers: BTreeMap<LayerRole, LayerExponents>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attn_exponent: Option<Rational>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    SP,
    MuP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct AblationFlags {
    pub embd: bool,
    pub last: bool,
    pub ln: bool,
    pub attn: bool,
}

impl AblationFlags {
    pub const SP: AblationFlags = AblationFlags { embd: false, last: false, ln: false, attn: false };
    pub const MUP: AblationFlags = AblationFlags { embd: true, last: true, ln: true, attn: true };

    /// All 16 flag combinations, SP first and muP last.
    pub fn all() -> Vec<AblationFlags> {
        (0u8..16)
            .map(|m| AblationFlags {
                embd: m & 1 != 0,
                last: m & 2 != 0,
                ln: m & 4 != 0,
                attn: m & 8 != 0,
            })
            .collect()
    }

    fn as_array(&self) -> [(bool, &'static str); 4] {
        [(self.embd, "Embd"), (self.last, "Last"), (self.ln, "LN"), (self.attn, "Attn")]
    }

    pub fn count(&self) -> usize {
        self.as_array().iter().filter(|(f, _)| *f).count()
    }

    /// `SP`, `muP`, `SP+X`, `muP-X`, otherwise the full `SP+X+Y` list.
    pub fn name(&self) -> String {
        let arr = self.as_array();
        match self.count() {
            0 => "SP".to_string(),
            4 => "muP".to_string(),
            3 => {
                let off = arr.iter().find(|(f, _)| !*f).map(|(_, n)| *n).unwrap_or("");
                format!("muP-{off}")
            }
            _ => {
                let mut s = String::from("SP");
                for (f, n) in arr {
                    if f {
                        s.push('+');
                        s.push_str(n);
                    }
                }
                s
            }
        }
    }
}

fn table(
    name: &str,
    optimizer: OptimizerKind,
    input: LayerExponents,
    hidden: LayerExponents,
    output: LayerExponents,
    ln_c: Rational,
    attn: Rational,
) -> ParamSpec {
    let mut layers = BTreeMap::new();
    layers.insert(LayerRole::Input, input);
    layers.insert(LayerRole::Hidden, hidden);
    layers.insert(LayerRole::Output, output);
    layers.insert(LayerRole::LayerNorm, LayerExponents::lr_only(ln_c));
    ParamSpec {
        name: name.to_string(),
        optimizer,
        weight_tied: false,
        layers,
        attn_exponent: Some(attn),
    }
}

fn full(a: Rational, b: Rational, c: Rational, d: Rational) -> LayerExponents {
    LayerExponents::full(a, b, c, d)
}

/// Canonical SP or muP exponent table for the optimizer.
///
/// SGD muP is returned in the no-multiplier gauge. SGD SP keeps the same
/// table as Adam SP (1/fan-in variance, global 1/n learning rate).
pub fn base_spec(kind: BaseKind, optimizer: OptimizerKind) -> ParamSpec {
    let (z, h, one) = (int(0), half(), int(1));
    match (kind, optimizer) {
        (BaseKind::SP, _) => table(
            "SP",
            optimizer,
            full(z, z, one, -one),
            full(z, h, one, -one),
            full(z, h, one, -one),
            one,
            h,
        ),
        (BaseKind::MuP, OptimizerKind::Adam) => table(
            "muP",
            optimizer,
            full(z, z, z, z),
            full(z, h, one, -one),
            full(z, one, one, -one),
            z,
            one,
        ),
        (BaseKind::MuP, OptimizerKind::Sgd) => table(
            "muP",
            optimizer,
            full(z, z, -one, one),
            full(z, h, z, z),
            full(z, one, one, -one),
            z,
            one,
        ),
    }
}

/// SP with the flagged components switched to their muP values.
pub fn ablate(flags: AblationFlags, optimizer: OptimizerKind) -> ParamSpec {
    let mut spec = base_spec(BaseKind::SP, optimizer);
    let mup = base_spec(BaseKind::MuP, optimizer);
    let get = |s: &ParamSpec, r: LayerRole| s.layers[&r];
    if flags.embd {
        let m = get(&mup, LayerRole::Input);
        let e = spec.layers.get_mut(&LayerRole::Input).unwrap();
        e.c = m.c;
        e.d = m.d;
    }
    if flags.last {
        let m = get(&mup, LayerRole::Output);
        spec.layers.get_mut(&LayerRole::Output).unwrap().b = m.b;
    }
    if flags.ln {
        let m = get(&mup, LayerRole::LayerNorm);
        spec.layers.get_mut(&LayerRole::LayerNorm).unwrap().c = m.c;
    }
    if flags.attn {
        spec.attn_exponent = mup.attn_exponent;
    }
    spec.name = flags.name();
    spec
}

/// Flags of the ablation lattice point equal to `spec`, if any.
pub fn ablation_flags_of(spec: &ParamSpec) -> Option<AblationFlags> {
    AblationFlags::all().into_iter().find(|f| {
        let mut cand = ablate(*f, spec.optimizer);
        cand.name = spec.name.clone();
        cand == *spec
    })
}

/// Canonical name: derived from the ablation lattice when the spec is a
/// lattice point, otherwise the stored name.
pub fn spec_name(spec: &ParamSpec) -> String {
    match ablation_flags_of(spec) {
        Some(f) => f.name(),
        None => spec.name.clone(),
    }
}

/// Weight-tied muP example: `a_u = 0`, output multiplier `1/n`.
pub fn weight_tied_spec(optimizer: OptimizerKind) -> ParamSpec {
    let (z, h, one) = (int(0), half(), int(1));
    let (input, hidden) = match optimizer {
        OptimizerKind::Adam => (full(z, z, z, z), full(z, h, one, -one)),
        // a_u + c_u + a_v = 0 and 2a_w + c_w + a_v + b_u = 1
        OptimizerKind::Sgd => (full(z, z, -one, one), full(z, h, z, z)),
    };
    let mut spec = table(
        "muP-tied",
        optimizer,
        input,
        hidden,
        LayerExponents::mult_only(one),
        z,
        one,
    );
    spec.weight_tied = true;
    spec
}

impl ParamSpec {
    pub fn exps(&self, role: LayerRole) -> Result<LayerExponents> {
        if role == LayerRole::AttentionScale {
            return self
                .attn_exponent
                .map(LayerExponents::mult_only)
                .ok_or(Error::MissingRole(role));
        }
        let mut e = *self.layers.get(&role).ok_or(Error::MissingRole(role))?;
        if self.weight_tied && role == LayerRole::Output {
            let u = self.layers.get(&LayerRole::Input).ok_or(Error::MissingRole(LayerRole::Input))?;
            e.b = u.b;
            e.c = u.c;
            e.d = u.d;
        }
        Ok(e)
    }

    /// Exponents with tying resolved; panics only on malformed specs.
    fn effective(&self, role: LayerRole) -> LayerExponents {
        self.exps(role).unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn from_json(s: &str) -> Result<ParamSpec> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("invalid spec json: {e}")))
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    /// Sets the learning-rate exponent of one role.
    pub fn with_lr_exponent(mut self, role: LayerRole, c: Rational) -> Result<Self> {
        let e = self.layers.get_mut(&role).ok_or(Error::MissingRole(role))?;
        e.c = Some(c);
        Ok(self)
    }
}

/// Named spec lookup used by the command line and configs.
pub fn spec_by_name(name: &str, optimizer: OptimizerKind) -> Result<ParamSpec> {
    let norm = name.replace('μ', "mu");
    if norm == "muP-tied" {
        return Ok(weight_tied_spec(optimizer));
    }
    for f in AblationFlags::all() {
        if f.name() == norm {
            return Ok(ablate(f, optimizer));
        }
    }
    // Two-flag names are order-insensitive, e.g. "SP+Attn+Embd".
    if let Some(rest) = norm.strip_prefix("SP+") {
        let mut flags = AblationFlags::default();
        for part in rest.split('+') {
            match part {
                "Embd" => flags.embd = true,
                "Last" => flags.last = true,
                "LN" => flags.ln = true,
                "Attn" => flags.attn = true,
                _ => return Err(Error::Config(format!("unknown spec name '{name}'"))),
            }
        }
        return Ok(ablate(flags, optimizer));
    }
    Err(Error::Config(format!("unknown spec name '{name}'")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedLayerHP {
    pub multiplier: Option<f64>,
    pub init_std: Option<f64>,
    pub lr: Option<f64>,
    pub wd: Option<f64>,
}

/// Numeric hyperparameters of one role at width `width`.
pub fn resolve(
    spec: &ParamSpec,
    role: LayerRole,
    width: usize,
    head_dim: usize,
    eta: f64,
    lambda: f64,
) -> Result<ResolvedLayerHP> {
    if width == 0 || head_dim == 0 {
        return Err(Error::Config("width and head_dim must be >= 1".into()));
    }
    let e = spec.exps(role)?;
    let n = if role == LayerRole::AttentionScale { head_dim as f64 } else { width as f64 };
    Ok(ResolvedLayerHP {
        multiplier: e.a.map(|a| pow_width(n, -a)),
        init_std: e.b.map(|b| pow_width(n, -b)),
        lr: e.c.map(|c| eta * pow_width(n, -c)),
        wd: e.d.map(|d| lambda * pow_width(n, -d)),
    })
}

/// Shifts one role along its gauge orbit.
pub fn gauge_transform(spec: &ParamSpec, role: LayerRole, delta: Rational) -> Result<ParamSpec> {
    if spec.weight_tied && role == LayerRole::Output {
        return Err(Error::Gauge(format!("{role} is tied and carries only a multiplier")));
    }
    let e = spec
        .layers
        .get(&role)
        .filter(|e| e.is_full())
        .ok_or_else(|| Error::Gauge(format!("{role} lacks a full set of exponents")))?;
    let (a, b, c, d) = (e.a.unwrap(), e.b.unwrap(), e.c.unwrap(), e.d.unwrap());
    let k = match spec.optimizer {
        OptimizerKind::Sgd => int(2),
        OptimizerKind::Adam => int(1),
    };
    let mut out = spec.clone();
    out.layers
        .insert(role, full(a + delta, b - delta, c - k * delta, d + k * delta));
    Ok(out)
}

/// Which alignment exponents the stability check assumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignmentAssumption {
    /// All alignment exponents 1/2 (independent random quantities).
    Init,
    /// rho = sigma = omega_v = 1, omega_w = 1/2.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentExponents {
    pub rho_w: Rational,
    pub omega_w: Rational,
    pub sigma_w: Rational,
    pub rho_v: Rational,
    pub omega_v: Rational,
    pub sigma_v: Rational,
}

impl AlignmentExponents {
    pub fn of(assumption: AlignmentAssumption) -> Self {
        let (h, one) = (half(), int(1));
        match assumption {
            AlignmentAssumption::Init => AlignmentExponents {
                rho_w: h,
                omega_w: h,
                sigma_w: h,
                rho_v: h,
                omega_v: h,
                sigma_v: h,
            },
            AlignmentAssumption::Full => AlignmentExponents {
                rho_w: one,
                omega_w: h,
                sigma_w: one,
                rho_v: one,
                omega_v: one,
                sigma_v: one,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub id: String,
    pub role: LayerRole,
    /// Human readable relation, e.g. `a_u + b_u = 0`.
    pub expected: String,
    pub relation: Relation,
    pub value: Rational,
    pub target: Rational,
    pub satisfied: bool,
    /// `value - target`.
    pub residual: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub alignment: AlignmentAssumption,
    pub conditions: Vec<Condition>,
    /// Structural contradictions that no choice of the free exponents fixes.
    pub contradictions: Vec<String>,
}

impl StabilityReport {
    pub fn all_satisfied(&self) -> bool {
        self.conditions.iter().all(|c| c.satisfied) && self.contradictions.is_empty()
    }

    pub fn failed(&self) -> Vec<&Condition> {
        self.conditions.iter().filter(|c| !c.satisfied).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.id == id)
    }
}

fn cond(id: &str, role: LayerRole, expected: String, rel: Relation, value: Rational, target: Rational) -> Condition {
    let residual = value - target;
    let satisfied = match rel {
        Relation::Eq => residual.is_zero(),
        Relation::Ge => !residual.is_negative(),
    };
    Condition {
        id: id.to_string(),
        role,
        expected,
        relation: rel,
        value,
        target,
        satisfied,
        residual,
    }
}

fn max3(a: Rational, b: Rational, c: Rational) -> Rational {
    a.max(b).max(c)
}

/// Stability conditions of the three-layer model under an alignment
/// assumption. Unsatisfied conditions are reported, never returned as errors.
pub fn check_stability(spec: &ParamSpec, alignment: AlignmentAssumption) -> StabilityReport {
    let mut rep = check_stability_with(spec, &AlignmentExponents::of(alignment));
    rep.alignment = alignment;
    rep
}

/// Same as [`check_stability`] with explicit alignment exponents.
pub fn check_stability_with(spec: &ParamSpec, al: &AlignmentExponents) -> StabilityReport {
    use LayerRole::*;
    use Relation::*;
    let z = int(0);
    let u = spec.effective(Input);
    let w = spec.effective(Hidden);
    let v = spec.effective(Output);
    let g = |x: Option<Rational>| x.unwrap_or(z);
    let (au, bu, cu, du) = (g(u.a), g(u.b), g(u.c), g(u.d));
    let (aw, bw, cw, dw) = (g(w.a), g(w.b), g(w.c), g(w.d));
    let (av, bv, cv, dv) = (g(v.a), g(v.b), g(v.c), g(v.d));
    let tied = spec.weight_tied;
    let mut c = Vec::new();

    c.push(cond("init_u", Input, "a_u + b_u = 0".into(), Eq, au + bu, z));
    c.push(cond("init_w", Hidden, "a_w + b_w = 1/2".into(), Eq, aw + bw, half()));
    if tied {
        c.push(cond("init_v", Output, "a_v + b_u >= 1/2".into(), Ge, av + bu, half()));
    } else {
        c.push(cond("init_v", Output, "a_v + b_v >= 1/2".into(), Ge, av + bv, half()));
    }

    match (spec.optimizer, tied) {
        (OptimizerKind::Adam, _) => {
            c.push(cond("update_u", Input, "r_u = a_u + c_u = 0".into(), Eq, au + cu, z));
            let rw = max3(al.rho_w - aw - cw, al.omega_w - half(), al.sigma_w - aw - cw);
            c.push(cond(
                "update_w",
                Hidden,
                "r_w = max(rho_w - a_w - c_w, omega_w - 1/2, sigma_w - a_w - c_w) = 0".into(),
                Eq,
                rw,
                z,
            ));
            let rv = if tied {
                max3(al.rho_v - av - cu, al.omega_v - av - bu, al.sigma_v - av - cu)
            } else {
                max3(al.rho_v - av - cv, al.omega_v - av - bv, al.sigma_v - av - cv)
            };
            let text = if tied {
                "r_v = max(rho_v - a_v - c_u, omega_v - a_v - b_u, sigma_v - a_v - c_u) = 0"
            } else {
                "r_v = max(rho_v - a_v - c_v, omega_v - a_v - b_v, sigma_v - a_v - c_v) = 0"
            };
            c.push(cond("update_v", Output, text.into(), Eq, rv, z));
        }
        (OptimizerKind::Sgd, false) => {
            c.push(cond(
                "update_u",
                Input,
                "r_u = 2a_u + c_u + a_v + b_v = 0".into(),
                Eq,
                au * 2 + cu + av + bv,
                z,
            ));
            let t = aw * 2 + cw + av + bv;
            let rw = max3(al.rho_w - t, al.omega_w - half(), al.sigma_w - t);
            c.push(cond(
                "update_w",
                Hidden,
                "r_w = max(rho_w - 2a_w - c_w - a_v - b_v, omega_w - 1/2, sigma_w - 2a_w - c_w - a_v - b_v) = 0"
                    .into(),
                Eq,
                rw,
                z,
            ));
            let t = av * 2 + cv;
            let rv = max3(al.rho_v - t, al.omega_v - av - bv, al.sigma_v - t);
            c.push(cond(
                "update_v",
                Output,
                "r_v = max(rho_v - 2a_v - c_v, omega_v - a_v - b_v, sigma_v - 2a_v - c_v) = 0".into(),
                Eq,
                rv,
                z,
            ));
        }
        (OptimizerKind::Sgd, true) => {
            c.push(cond("update_u", Input, "r_u = a_u + c_u + a_v = 0".into(), Eq, au + cu + av, z));
            let t = aw * 2 + cw + av + bu;
            let rw = max3(al.rho_w - t, al.omega_w - half(), al.sigma_w - t);
            c.push(cond(
                "update_w",
                Hidden,
                "r_w = max(rho_w - 2a_w - c_w - a_v - b_u, omega_w - 1/2, sigma_w - 2a_w - c_w - a_v - b_u) = 0"
                    .into(),
                Eq,
                rw,
                z,
            ));
            let t = av * 2 + cu;
            let rv = max3(al.rho_v - t, al.omega_v - av - bu, al.sigma_v - t);
            c.push(cond(
                "update_v",
                Output,
                "r_v = max(rho_v - 2a_v - c_u, omega_v - a_v - b_u, sigma_v - 2a_v - c_u) = 0".into(),
                Eq,
                rv,
                z,
            ));
        }
    }

    c.push(cond("wd_u", Input, "c_u + d_u = 0".into(), Eq, cu + du, z));
    c.push(cond("wd_w", Hidden, "c_w + d_w = 0".into(), Eq, cw + dw, z));
    if !tied {
        c.push(cond("wd_v", Output, "c_v + d_v = 0".into(), Eq, cv + dv, z));
    }

    let mut contradictions = Vec::new();
    if tied && au == av {
        // First-layer init demands b_u = -a_u, the last layer b_u = omega_v - a_v.
        let from_first = -au;
        let from_last = al.omega_v - av;
        if from_first != from_last {
            contradictions.push(format!(
                "a_u = a_v forces b_u = {from_first} (first layer) and b_u = {from_last} (last layer)"
            ));
        }
    }

    StabilityReport { alignment: AlignmentAssumption::Init, conditions: c, contradictions }
}

/// LayerNorm and attention-scale conditions, kept apart from the
/// three-layer report: `c_LN = 0` and `attn_exponent = rho_a`.
pub fn check_auxiliary(spec: &ParamSpec, rho_attn: Rational) -> Vec<Condition> {
    let mut out = Vec::new();
    if let Some(c) = spec.layers.get(&LayerRole::LayerNorm).and_then(|e| e.c) {
        out.push(cond("update_ln", LayerRole::LayerNorm, "c_LN = 0".into(), Relation::Eq, c, int(0)));
    }
    if let Some(a) = spec.attn_exponent {
        out.push(cond(
            "attn_logits",
            LayerRole::AttentionScale,
            "alpha_attn = rho_a".into(),
            Relation::Eq,
            a,
            rho_attn,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_names() {
        let names: Vec<String> = AblationFlags::all().iter().map(|f| f.name()).collect();
        assert_eq!(names[0], "SP");
        assert_eq!(names[15], "muP");
        assert!(names.contains(&"SP+Embd".to_string()));
        assert!(names.contains(&"muP-Attn".to_string()));
        assert!(names.contains(&"SP+Embd+Attn".to_string()));
    }

    #[test]
    fn pow_width_integer_exact() {
        assert_eq!(pow_width(256.0, int(-1)), 1.0 / 256.0);
        assert_eq!(pow_width(64.0, rat(-1, 2)), 0.125);
    }

    #[test]
    fn lookup_by_name_round_trips() {
        for f in AblationFlags::all() {
            let s = spec_by_name(&f.name(), OptimizerKind::Adam).unwrap();
            assert_eq!(ablation_flags_of(&s), Some(f));
        }
        assert!(spec_by_name("nope", OptimizerKind::Adam).is_err());
    }
}
