//! Pipeline parameters and the flat key-value config format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{flt, Real};

/// Value that is either derived from the input ("auto") or pinned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AutoOr<T> {
    Auto,
    Fixed(T),
}

impl<T: Copy> AutoOr<T> {
    pub fn resolve(self, auto: T) -> T {
        match self {
            AutoOr::Auto => auto,
            AutoOr::Fixed(v) => v,
        }
    }
}

/// All tunable parameters of the segmentation pipeline.
///
/// `l` is the segment count of the prior and labeling stages; `mu` balances
/// the local affinity term against the global reconstruction penalty; `r`
/// is the neighbor count of the global coefficients; `d` the number of
/// eigenvectors kept; `e1`/`e2` the pixel radii for density estimation and
/// affinity construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig<F> {
    pub l: usize,
    pub mu: F,
    pub r: usize,
    pub d: usize,
    pub e1: F,
    pub e2: F,
    pub alpha: F,
    pub betas: Vec<F>,
    pub gammas: Vec<F>,
    pub target_n: usize,
    pub bins: usize,
    /// KDE bandwidth; auto = Silverman's rule per channel.
    pub bandwidth: AutoOr<F>,
    /// Candidate-pool radius for global neighbors; auto = 0.75 max(w, h).
    pub geodesic_range: AutoOr<F>,
    pub gamma_b: F,
    pub density_floor: F,
    pub affinity_log_clip: F,
    pub solver_tol: F,
    /// Eigensolver iteration budget; auto = 300 d.
    pub solver_max_iters: AutoOr<usize>,
    pub kmeans_weighted: bool,
    pub kmeans_max_iters: usize,
}

impl<F: Real> Default for PipelineConfig<F> {
    fn default() -> Self {
        PipelineConfig {
            l: 6,
            mu: flt(8.0),
            r: 14,
            d: 6,
            e1: flt(20.0),
            e2: flt(40.0),
            alpha: flt(1e-10),
            betas: [200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0]
                .iter()
                .map(|&b| flt(b))
                .collect(),
            gammas: [0.5, 1.5, 2.0].iter().map(|&g| flt(g)).collect(),
            target_n: 600,
            bins: 64,
            bandwidth: AutoOr::Auto,
            geodesic_range: AutoOr::Auto,
            gamma_b: flt(5.0),
            density_floor: flt(1e-8),
            affinity_log_clip: flt(15.0),
            solver_tol: flt(1e-8),
            solver_max_iters: AutoOr::Auto,
            kmeans_weighted: false,
            kmeans_max_iters: 100,
        }
    }
}

impl<F: Real> PipelineConfig<F> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("l", self.l),
            ("r", self.r),
            ("d", self.d),
            ("target_n", self.target_n),
            ("bins", self.bins),
            ("kmeans_max_iters", self.kmeans_max_iters),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1, got {v}")));
            }
        }
        if !(self.e2 > self.e1) {
            return Err(Error::Config("e2 must exceed e1".into()));
        }
        if !(self.e1 > F::zero()) {
            return Err(Error::Config("e1 must be positive".into()));
        }
        if !(self.mu >= F::zero()) {
            return Err(Error::Config("mu must be nonnegative".into()));
        }
        if !(self.alpha > F::zero()) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if self.betas.is_empty() {
            return Err(Error::Config("betas must be nonempty".into()));
        }
        if self.betas.iter().any(|&b| !(b > F::zero())) {
            return Err(Error::Config("betas must be positive".into()));
        }
        if self.gammas.is_empty() {
            return Err(Error::Config("gammas must be nonempty".into()));
        }
        if !(self.gamma_b >= F::zero()) {
            return Err(Error::Config("gamma_b must be nonnegative".into()));
        }
        if !(self.density_floor > F::zero()) {
            return Err(Error::Config("density_floor must be positive".into()));
        }
        if !(self.affinity_log_clip > F::zero()) {
            return Err(Error::Config("affinity_log_clip must be positive".into()));
        }
        if !(self.solver_tol > F::zero()) {
            return Err(Error::Config("solver_tol must be positive".into()));
        }
        if let AutoOr::Fixed(b) = self.bandwidth {
            if !(b > F::zero()) {
                return Err(Error::Config("bandwidth must be positive".into()));
            }
        }
        if let AutoOr::Fixed(g) = self.geodesic_range {
            if !(g > F::zero()) {
                return Err(Error::Config("geodesic_range must be positive".into()));
            }
        }
        if let AutoOr::Fixed(0) = self.solver_max_iters {
            return Err(Error::Config("solver_max_iters must be >= 1".into()));
        }
        Ok(())
    }

    pub fn solver_budget(&self) -> usize {
        self.solver_max_iters.resolve(300 * self.d)
    }

    /// Parses the flat `key = value` format. Lines starting with `#` and
    /// blank lines are skipped; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                Error::Config(format!("line {}: {key}: {what}: {value:?}", lineno + 1))
            };
            match key {
                "l" => cfg.l = parse_count(value).ok_or_else(|| bad("expected a count"))?,
                "r" => cfg.r = parse_count(value).ok_or_else(|| bad("expected a count"))?,
                "d" => cfg.d = parse_count(value).ok_or_else(|| bad("expected a count"))?,
                "target_n" => {
                    cfg.target_n = parse_count(value).ok_or_else(|| bad("expected a count"))?
                }
                "bins" => cfg.bins = parse_count(value).ok_or_else(|| bad("expected a count"))?,
                "kmeans_max_iters" => {
                    cfg.kmeans_max_iters =
                        parse_count(value).ok_or_else(|| bad("expected a count"))?
                }
                "mu" => cfg.mu = parse_real(value).ok_or_else(|| bad("expected a number"))?,
                "e1" => cfg.e1 = parse_real(value).ok_or_else(|| bad("expected a number"))?,
                "e2" => cfg.e2 = parse_real(value).ok_or_else(|| bad("expected a number"))?,
                "alpha" => {
                    cfg.alpha = parse_real(value).ok_or_else(|| bad("expected a number"))?
                }
                "gamma_b" => {
                    cfg.gamma_b = parse_real(value).ok_or_else(|| bad("expected a number"))?
                }
                "density_floor" => {
                    cfg.density_floor =
                        parse_real(value).ok_or_else(|| bad("expected a number"))?
                }
                "affinity_log_clip" => {
                    cfg.affinity_log_clip =
                        parse_real(value).ok_or_else(|| bad("expected a number"))?
                }
                "solver_tol" => {
                    cfg.solver_tol = parse_real(value).ok_or_else(|| bad("expected a number"))?
                }
                "betas" => {
                    cfg.betas = parse_list(value).ok_or_else(|| bad("expected a number list"))?
                }
                "gammas" => {
                    cfg.gammas = parse_list(value).ok_or_else(|| bad("expected a number list"))?
                }
                "bandwidth" => {
                    cfg.bandwidth = if value == "auto" {
                        AutoOr::Auto
                    } else {
                        AutoOr::Fixed(parse_real(value).ok_or_else(|| bad("expected auto or a number"))?)
                    }
                }
                "geodesic_range" => {
                    cfg.geodesic_range = if value == "auto" {
                        AutoOr::Auto
                    } else {
                        AutoOr::Fixed(parse_real(value).ok_or_else(|| bad("expected auto or a number"))?)
                    }
                }
                "solver_max_iters" => {
                    cfg.solver_max_iters = if value == "auto" {
                        AutoOr::Auto
                    } else {
                        AutoOr::Fixed(parse_count(value).ok_or_else(|| bad("expected auto or a count"))?)
                    }
                }
                "kmeans_weighted" => {
                    cfg.kmeans_weighted = match value {
                        "true" => true,
                        "false" => false,
                        _ => return Err(bad("expected true or false")),
                    }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {key:?}",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serializes back to the flat format; `parse` of the result roundtrips.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let fr = |v: F| format!("{:?}", v.to_f64().unwrap_or(f64::NAN));
        let _ = writeln!(out, "l = {}", self.l);
        let _ = writeln!(out, "mu = {}", fr(self.mu));
        let _ = writeln!(out, "r = {}", self.r);
        let _ = writeln!(out, "d = {}", self.d);
        let _ = writeln!(out, "e1 = {}", fr(self.e1));
        let _ = writeln!(out, "e2 = {}", fr(self.e2));
        let _ = writeln!(out, "alpha = {}", fr(self.alpha));
        let list = |vs: &[F]| vs.iter().map(|&v| fr(v)).collect::<Vec<_>>().join(", ");
        let _ = writeln!(out, "betas = {}", list(&self.betas));
        let _ = writeln!(out, "gammas = {}", list(&self.gammas));
        let _ = writeln!(out, "target_n = {}", self.target_n);
        let _ = writeln!(out, "bins = {}", self.bins);
        let auto_real = |v: AutoOr<F>| match v {
            AutoOr::Auto => "auto".to_string(),
            AutoOr::Fixed(x) => fr(x),
        };
        let _ = writeln!(out, "bandwidth = {}", auto_real(self.bandwidth));
        let _ = writeln!(out, "geodesic_range = {}", auto_real(self.geodesic_range));
        let _ = writeln!(out, "gamma_b = {}", fr(self.gamma_b));
        let _ = writeln!(out, "density_floor = {}", fr(self.density_floor));
        let _ = writeln!(out, "affinity_log_clip = {}", fr(self.affinity_log_clip));
        let _ = writeln!(out, "solver_tol = {}", fr(self.solver_tol));
        let _ = writeln!(
            out,
            "solver_max_iters = {}",
            match self.solver_max_iters {
                AutoOr::Auto => "auto".to_string(),
                AutoOr::Fixed(v) => v.to_string(),
            }
        );
        let _ = writeln!(out, "kmeans_weighted = {}", self.kmeans_weighted);
        let _ = writeln!(out, "kmeans_max_iters = {}", self.kmeans_max_iters);
        out
    }
}

fn parse_count(s: &str) -> Option<usize> {
    s.parse::<usize>().ok()
}

fn parse_real<F: Real>(s: &str) -> Option<F> {
    let v = s.parse::<f64>().ok()?;
    if v.is_finite() {
        Some(flt(v))
    } else {
        None
    }
}

fn parse_list<F: Real>(s: &str) -> Option<Vec<F>> {
    let parts: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    if parts.is_empty() {
        return None;
    }
    parts.into_iter().map(parse_real).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_match_published_settings() {
        let cfg: PipelineConfig<f64> = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.l, 6);
        assert_eq!(cfg.mu, 8.0);
        assert_eq!(cfg.r, 14);
        assert_eq!(cfg.d, 6);
        assert_eq!(cfg.e1, 20.0);
        assert_eq!(cfg.e2, 40.0);
        assert_eq!(cfg.alpha, 1e-10);
        assert_eq!(
            cfg.betas,
            vec![200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0]
        );
        assert_eq!(cfg.gammas, vec![0.5, 1.5, 2.0]);
        assert_eq!(cfg.target_n, 600);
        assert_eq!(cfg.bins, 64);
        assert_eq!(cfg.solver_budget(), 1800);
    }

    #[test]
    fn parses_overrides_comments_and_lists() {
        let text = "\
# comment line
l = 4

mu = 2.5
betas = 100, 200
bandwidth = 0.05
geodesic_range = auto
solver_max_iters = 50
kmeans_weighted = true
";
        let cfg: PipelineConfig<f64> = PipelineConfig::parse(text).unwrap();
        assert_eq!(cfg.l, 4);
        assert_eq!(cfg.mu, 2.5);
        assert_eq!(cfg.betas, vec![100.0, 200.0]);
        assert_eq!(cfg.bandwidth, AutoOr::Fixed(0.05));
        assert_eq!(cfg.geodesic_range, AutoOr::Auto);
        assert_eq!(cfg.solver_max_iters, AutoOr::Fixed(50));
        assert!(cfg.kmeans_weighted);
        // Untouched keys keep their defaults.
        assert_eq!(cfg.r, 14);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(
            PipelineConfig::<f64>::parse("lsegments = 3"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::<f64>::parse("mu = soup"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::<f64>::parse("no equals sign"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invariants_are_enforced() {
        // e2 must exceed e1.
        assert!(PipelineConfig::<f64>::parse("e2 = 10").is_err());
        // Counts must be >= 1.
        assert!(PipelineConfig::<f64>::parse("l = 0").is_err());
        // mu must be nonnegative.
        assert!(PipelineConfig::<f64>::parse("mu = -1").is_err());
        // Empty beta list.
        assert!(PipelineConfig::<f64>::parse("betas = ").is_err());
    }

    #[test]
    fn text_roundtrip_preserves_every_field() {
        let mut cfg: PipelineConfig<f64> = PipelineConfig::default();
        cfg.mu = 3.75;
        cfg.bandwidth = AutoOr::Fixed(0.125);
        cfg.solver_max_iters = AutoOr::Fixed(123);
        cfg.kmeans_weighted = true;
        let back = PipelineConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, back);
    }
}
