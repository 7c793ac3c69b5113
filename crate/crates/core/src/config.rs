//! Run configuration: a small line-oriented format with `[model]`, `[grid]`
//! and `[solver]` sections.
//!
//! ```text
//! [model]
//! d1 = affine(1.0, 0.5)         # family(p1, p2[, p3])
//! birth = pwlinear(0:0, 1:1)    # age:value breakpoints
//! [solver]
//! eta_scan = [1.1, 2, 5]
//! ```

use std::fmt;
use std::fmt::Write as _;

use crate::evolve::StepScheme;
use crate::model::{AgeProfile, CoefficientFn, ModelSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at line {}, column {}", self.message, self.line, self.column)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub nx: usize,
    pub na: usize,
    pub scheme: StepScheme,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Newton tolerance of the coexistence and continuation solves.
    pub tol: f64,
    pub reduced_tol: f64,
    pub perron_tol: f64,
    pub max_iter: usize,
    pub eta: f64,
    pub eps0: f64,
    pub ds: f64,
    pub n_steps: usize,
    /// Absolute `ξ` values; when absent the scan uses multiples of `ξ₀`.
    pub xi_scan: Option<Vec<f64>>,
    pub eta_scan: Vec<f64>,
    pub z_max: f64,
    pub rho: f64,
    /// Number of grid levels in the refinement study.
    pub levels: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            reduced_tol: 1e-11,
            perron_tol: 1e-13,
            max_iter: 25,
            eta: 2.0,
            eps0: 0.02,
            ds: 0.05,
            n_steps: 8,
            xi_scan: None,
            eta_scan: vec![0.5, 0.9, 1.0, 1.1, 1.5, 2.0, 3.0, 5.0],
            z_max: 10.0,
            rho: 0.1,
            levels: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec<f64>,
    pub grid: GridConfig,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Sym(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

fn err<T>(line: usize, column: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        column,
        message: message.into(),
    })
}

fn tokenize(text: &str, line: usize, offset: usize) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = offset + i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                col,
            });
        } else if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            let s: String = chars[start..i].iter().collect();
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => out.push(Token { tok: Tok::Num(v), col }),
                _ => return err(line, col, format!("invalid number '{s}'")),
            }
        } else if "()[],:=".contains(c) {
            out.push(Token { tok: Tok::Sym(c), col });
            i += 1;
        } else {
            return err(line, col, format!("unexpected character '{c}'"));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Value {
    Num(f64),
    Ident(String),
    Call { name: String, args: Vec<(f64, Option<f64>)> },
    List(Vec<f64>),
}

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    line: usize,
    end_col: usize,
}

impl Cursor<'_> {
    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn expect_sym(&mut self, c: char) -> Result<(), ParseError> {
        let col = self.col();
        match self.next() {
            Some(Tok::Sym(s)) if s == c => Ok(()),
            _ => err(self.line, col, format!("expected '{c}'")),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let col = self.col();
        match self.next() {
            Some(Tok::Num(v)) => Ok(v),
            _ => err(self.line, col, "expected a number"),
        }
    }

    fn value(&mut self) -> Result<Value, ParseError> {
        let col = self.col();
        match self.next() {
            Some(Tok::Num(v)) => Ok(Value::Num(v)),
            Some(Tok::Sym('[')) => {
                let mut items = Vec::new();
                if matches!(self.toks.get(self.pos).map(|t| &t.tok), Some(Tok::Sym(']'))) {
                    self.pos += 1;
                    return Ok(Value::List(items));
                }
                loop {
                    items.push(self.number()?);
                    let col = self.col();
                    match self.next() {
                        Some(Tok::Sym(',')) => continue,
                        Some(Tok::Sym(']')) => return Ok(Value::List(items)),
                        _ => return err(self.line, col, "expected ',' or ']'"),
                    }
                }
            }
            Some(Tok::Ident(name)) => {
                if !matches!(self.toks.get(self.pos).map(|t| &t.tok), Some(Tok::Sym('('))) {
                    return Ok(Value::Ident(name));
                }
                self.pos += 1;
                let mut args = Vec::new();
                loop {
                    let first = self.number()?;
                    let second = if matches!(self.toks.get(self.pos).map(|t| &t.tok), Some(Tok::Sym(':'))) {
                        self.pos += 1;
                        Some(self.number()?)
                    } else {
                        None
                    };
                    args.push((first, second));
                    let col = self.col();
                    match self.next() {
                        Some(Tok::Sym(',')) => continue,
                        Some(Tok::Sym(')')) => return Ok(Value::Call { name, args }),
                        _ => return err(self.line, col, "expected ',' or ')'"),
                    }
                }
            }
            _ => err(self.line, col, "expected a value"),
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: Value,
    line: usize,
    col: usize,
}

const MODEL_KEYS: [&str; 12] = [
    "d1", "d2", "d3", "d4", "mu1", "mu2", "alpha", "beta", "a_max", "length", "omega", "birth",
];
const GRID_KEYS: [&str; 3] = ["nx", "na", "scheme"];
const SOLVER_KEYS: [&str; 13] = [
    "tol",
    "reduced_tol",
    "perron_tol",
    "max_iter",
    "eta",
    "eps0",
    "ds",
    "n_steps",
    "xi_scan",
    "eta_scan",
    "z_max",
    "rho",
    "levels",
];

fn section_keys(section: &str) -> &'static [&'static str] {
    match section {
        "model" => &MODEL_KEYS,
        "grid" => &GRID_KEYS,
        _ => &SOLVER_KEYS,
    }
}

type Section = Vec<(String, Entry)>;

fn get<'a>(sec: &'a Section, key: &str) -> Option<&'a Entry> {
    sec.iter().find(|(k, _)| k == key).map(|(_, e)| e)
}

fn number_of(e: &Entry, key: &str) -> Result<f64, ParseError> {
    match &e.value {
        Value::Num(v) => Ok(*v),
        _ => err(e.line, e.col, format!("'{key}' expects a number")),
    }
}

fn count_of(e: &Entry, key: &str) -> Result<usize, ParseError> {
    let v = number_of(e, key)?;
    if v < 0.0 || v.fract() != 0.0 || v > 1e9 {
        return err(e.line, e.col, format!("'{key}' expects a non-negative integer"));
    }
    Ok(v as usize)
}

fn function_of(e: &Entry, key: &str) -> Result<CoefficientFn<f64>, ParseError> {
    let Value::Call { name, args } = &e.value else {
        return err(e.line, e.col, format!("'{key}' expects family(p1, p2[, p3])"));
    };
    if args.iter().any(|(_, b)| b.is_some()) {
        return err(e.line, e.col, format!("'{key}': parameters are plain numbers"));
    }
    let p: Vec<f64> = args.iter().map(|(a, _)| *a).collect();
    let arity = |n: usize| -> Result<(), ParseError> {
        if p.len() == n {
            Ok(())
        } else {
            err(e.line, e.col, format!("family '{name}' takes {n} parameters, got {}", p.len()))
        }
    };
    match name.as_str() {
        "affine" => {
            arity(2)?;
            Ok(CoefficientFn::affine(p[0], p[1]))
        }
        "saturating" => {
            arity(3)?;
            Ok(CoefficientFn::Saturating { c0: p[0], c1: p[1], k: p[2] })
        }
        "expsat" => {
            arity(3)?;
            Ok(CoefficientFn::ExpSat { c0: p[0], c1: p[1], k: p[2] })
        }
        other => err(e.line, e.col, format!("unknown family '{other}' at line {}", e.line)),
    }
}

fn profile_of(e: &Entry, key: &str) -> Result<AgeProfile<f64>, ParseError> {
    let Value::Call { name, args } = &e.value else {
        return err(e.line, e.col, format!("'{key}' expects pwlinear(a1:v1, ...)"));
    };
    if name != "pwlinear" {
        return err(e.line, e.col, format!("unknown profile '{name}' at line {}", e.line));
    }
    let mut pts = Vec::with_capacity(args.len());
    for (a, v) in args {
        let Some(v) = v else {
            return err(e.line, e.col, "pwlinear breakpoints are written age:value");
        };
        pts.push((*a, *v));
    }
    AgeProfile::new(pts).map_err(|x| ParseError {
        line: e.line,
        column: e.col,
        message: x.to_string(),
    })
}

fn list_of(e: &Entry, key: &str) -> Result<Vec<f64>, ParseError> {
    match &e.value {
        Value::List(v) => Ok(v.clone()),
        Value::Num(v) => Ok(vec![*v]),
        _ => err(e.line, e.col, format!("'{key}' expects a list [x1, x2, ...]")),
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ParseError> {
    let mut sections: Vec<(String, usize, Section)> = Vec::new();
    let mut last_line = 1;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lead = content.len() - content.trim_start().len();
        let lead_col = content[..lead].chars().count() + 1;
        if trimmed.starts_with('[') {
            let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) else {
                return err(line, lead_col, "malformed section header");
            };
            let name = name.trim();
            if !matches!(name, "model" | "grid" | "solver") {
                return err(line, lead_col, format!("unknown section '{name}'"));
            }
            if sections.iter().any(|(s, _, _)| s == name) {
                return err(line, lead_col, format!("duplicate section '{name}'"));
            }
            sections.push((name.to_string(), line, Vec::new()));
            continue;
        }
        let toks = tokenize(content, line, 0)?;
        let end_col = content.chars().count() + 1;
        let Some((section, _, entries)) = sections.last_mut() else {
            return err(line, lead_col, "entry outside of a section");
        };
        let mut cur = Cursor {
            toks: &toks,
            pos: 0,
            line,
            end_col,
        };
        let key_col = cur.col();
        let key = match cur.next() {
            Some(Tok::Ident(k)) => k,
            _ => return err(line, key_col, "expected a key"),
        };
        if !section_keys(section).contains(&key.as_str()) {
            return err(line, key_col, format!("unknown key '{key}' in [{section}]"));
        }
        if entries.iter().any(|(k, _)| *k == key) {
            return err(line, key_col, format!("duplicate key '{key}'"));
        }
        cur.expect_sym('=')?;
        let col = cur.col();
        let value = cur.value()?;
        if cur.pos < toks.len() {
            return err(line, cur.col(), "unexpected trailing input");
        }
        entries.push((key, Entry { value, line, col }));
    }

    let find = |name: &str| sections.iter().find(|(s, _, _)| s == name);
    let empty: Section = Vec::new();
    let (model, model_line) = match find("model") {
        Some((_, l, s)) => (s, *l),
        None => return err(last_line, 1, "missing section [model]"),
    };
    let (grid, grid_line) = match find("grid") {
        Some((_, l, s)) => (s, *l),
        None => return err(last_line, 1, "missing section [grid]"),
    };
    let solver = find("solver").map_or(&empty, |(_, _, s)| s);

    let require = |sec: &Section, line: usize, name: &str, key: &str| -> Result<Entry, ParseError> {
        get(sec, key).cloned().ok_or_else(|| ParseError {
            line,
            column: 1,
            message: format!("missing key '{key}' in [{name}]"),
        })
    };
    let m = |key: &str| require(model, model_line, "model", key);
    let spec = ModelSpec {
        d1: function_of(&m("d1")?, "d1")?,
        d2: function_of(&m("d2")?, "d2")?,
        d3: function_of(&m("d3")?, "d3")?,
        d4: function_of(&m("d4")?, "d4")?,
        mu1: function_of(&m("mu1")?, "mu1")?,
        mu2: function_of(&m("mu2")?, "mu2")?,
        alpha: number_of(&m("alpha")?, "alpha")?,
        beta: number_of(&m("beta")?, "beta")?,
        a_max: number_of(&m("a_max")?, "a_max")?,
        length: number_of(&m("length")?, "length")?,
        omega: profile_of(&m("omega")?, "omega")?,
        birth: profile_of(&m("birth")?, "birth")?,
    };

    let g = |key: &str| require(grid, grid_line, "grid", key);
    let scheme = match get(grid, "scheme") {
        None => StepScheme::ImplicitEuler,
        Some(e) => match &e.value {
            Value::Ident(s) => match StepScheme::parse(s) {
                Some(sc) => sc,
                None => return err(e.line, e.col, format!("unknown scheme '{s}'")),
            },
            _ => return err(e.line, e.col, "'scheme' expects implicit_euler or crank_nicolson"),
        },
    };
    let grid_cfg = GridConfig {
        nx: count_of(&g("nx")?, "nx")?,
        na: count_of(&g("na")?, "na")?,
        scheme,
    };

    let mut s = SolverConfig::default();
    for (key, e) in solver {
        match key.as_str() {
            "tol" => s.tol = number_of(e, key)?,
            "reduced_tol" => s.reduced_tol = number_of(e, key)?,
            "perron_tol" => s.perron_tol = number_of(e, key)?,
            "max_iter" => s.max_iter = count_of(e, key)?,
            "eta" => s.eta = number_of(e, key)?,
            "eps0" => s.eps0 = number_of(e, key)?,
            "ds" => s.ds = number_of(e, key)?,
            "n_steps" => s.n_steps = count_of(e, key)?,
            "xi_scan" => s.xi_scan = Some(list_of(e, key)?),
            "eta_scan" => s.eta_scan = list_of(e, key)?,
            "z_max" => s.z_max = number_of(e, key)?,
            "rho" => s.rho = number_of(e, key)?,
            "levels" => s.levels = count_of(e, key)?,
            _ => unreachable!("keys are checked while parsing"),
        }
    }
    Ok(RunConfig {
        model: spec,
        grid: grid_cfg,
        solver: s,
    })
}

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

/// Text that [`parse_config`] maps back to `cfg`.
pub fn render(cfg: &RunConfig) -> String {
    let m = &cfg.model;
    let mut out = String::new();
    let _ = writeln!(out, "[model]");
    for (k, f) in [("d1", &m.d1), ("d2", &m.d2), ("d3", &m.d3), ("d4", &m.d4), ("mu1", &m.mu1), ("mu2", &m.mu2)] {
        let _ = writeln!(out, "{k} = {f}");
    }
    for (k, v) in [("alpha", m.alpha), ("beta", m.beta), ("a_max", m.a_max), ("length", m.length)] {
        let _ = writeln!(out, "{k} = {v}");
    }
    let _ = writeln!(out, "omega = {}", m.omega);
    let _ = writeln!(out, "birth = {}", m.birth);
    let _ = writeln!(out, "\n[grid]");
    let _ = writeln!(out, "nx = {}", cfg.grid.nx);
    let _ = writeln!(out, "na = {}", cfg.grid.na);
    let _ = writeln!(out, "scheme = {}", cfg.grid.scheme.name());
    let s = &cfg.solver;
    let _ = writeln!(out, "\n[solver]");
    for (k, v) in [
        ("tol", s.tol),
        ("reduced_tol", s.reduced_tol),
        ("perron_tol", s.perron_tol),
        ("eta", s.eta),
        ("eps0", s.eps0),
        ("ds", s.ds),
        ("z_max", s.z_max),
        ("rho", s.rho),
    ] {
        let _ = writeln!(out, "{k} = {v:e}");
    }
    for (k, v) in [("max_iter", s.max_iter), ("n_steps", s.n_steps), ("levels", s.levels)] {
        let _ = writeln!(out, "{k} = {v}");
    }
    if let Some(xs) = &s.xi_scan {
        let _ = writeln!(out, "xi_scan = {}", list(xs));
    }
    let _ = writeln!(out, "eta_scan = {}", list(&s.eta_scan));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# comment line
[model]
d1 = affine(1.0, 0.5)
d2 = affine(0, 0.3)   # trailing comment
d3 = saturating(1, 0.2, 2)
d4 = affine(0, 0)
mu1 = expsat(0, 0.5, 2.0)
mu2 = affine(0.1, 0)
alpha = 1
beta = 1.5e0
a_max = 2
length = 1
omega = pwlinear(0:1, 2:1)
birth = pwlinear(0:0, 1:1, 2:1)

[grid]
nx = 15
na = 32
scheme = crank_nicolson

[solver]
eta_scan = [1.1, 2, 5]
eps0 = 1e-2
";

    #[test]
    fn parses_the_sample() {
        let cfg = parse_config(SAMPLE).unwrap();
        assert_eq!(cfg.model.d1, CoefficientFn::affine(1.0, 0.5));
        assert_eq!(cfg.model.birth.points().len(), 3);
        assert_eq!(cfg.model.beta, 1.5);
        assert_eq!(cfg.grid.scheme, StepScheme::CrankNicolson);
        assert_eq!(cfg.solver.eta_scan, vec![1.1, 2.0, 5.0]);
        assert_eq!(cfg.solver.eps0, 0.01);
        assert_eq!(cfg.solver.ds, SolverConfig::default().ds);
    }

    #[test]
    fn round_trips() {
        let mut cfg = parse_config(SAMPLE).unwrap();
        cfg.solver.xi_scan = Some(vec![0.1, 1.0 / 3.0]);
        assert_eq!(parse_config(&render(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn unknown_family_is_located() {
        let text = SAMPLE.replace("d1 = affine(1.0, 0.5)", "d1 = cubic(1,2)");
        let e = parse_config(&text).unwrap_err();
        assert_eq!(e.line, 3);
        assert_eq!(e.column, 6);
        assert!(e.message.contains("unknown family 'cubic' at line 3"), "{}", e.message);
    }

    #[test]
    fn rejects_bad_input() {
        let cases = [
            (SAMPLE.replace("alpha = 1", "gamma = 1"), 9, "unknown key"),
            (SAMPLE.replace("affine(1.0, 0.5)", "affine(1.0)"), 3, "takes 2 parameters"),
            (SAMPLE.replace("nx = 15", "nx = 1.5"), 17, "integer"),
            (SAMPLE.replace("alpha = 1", "alpha = 1 2"), 9, "trailing"),
            (SAMPLE.replace("beta = 1.5e0", "beta = $"), 10, "unexpected character"),
            (SAMPLE.replace("[grid]", "[mesh]"), 16, "unknown section"),
            (SAMPLE.replace("length = 1\n", ""), 2, "missing key 'length'"),
            (SAMPLE.replace("eps0 = 1e-2", "eps0 = 1e-2\neps0 = 2"), 24, "duplicate"),
        ];
        for (text, line, needle) in cases {
            let e = parse_config(&text).unwrap_err();
            assert_eq!(e.line, line, "{e}");
            assert!(e.to_string().contains(needle), "{e}");
        }
    }
}
