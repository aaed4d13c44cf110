use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::ValueEnum;

use super::{fmt12, with_output, AnalyzeArgs, CliError, CliResult, Format};
use crate::estimators::{AdjustmentKind, AdjustmentSpec, CrossTerms, PsiSource};
use crate::experiment::{EstimateReport, ExperimentData, PairingPlan, UnitRecord};
use crate::inference::estimate;

/// Regressors given to the LASSO-based methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LassoBasis {
    /// The x and w columns as they are.
    Raw,
    /// Squares, all x-w cross products and median hinges on top of x and w.
    Expanded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeConfig {
    pub data_path: PathBuf,
    pub outcome: String,
    pub treatment: String,
    pub pair_id: String,
    pub x: Vec<String>,
    pub w: Vec<String>,
    pub methods: Vec<AdjustmentKind>,
    pub alpha: f64,
    pub delta_null: f64,
    pub include_intercept: bool,
    pub lasso_basis: LassoBasis,
}

impl AnalyzeConfig {
    fn from_args(a: &AnalyzeArgs) -> CliResult<Self> {
        let methods = a
            .methods
            .iter()
            .map(|m| {
                m.trim()
                    .parse::<AdjustmentKind>()
                    .map_err(|e| CliError::Usage(e.to_string()))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let cfg = Self {
            data_path: a.data.clone(),
            outcome: a.outcome.clone(),
            treatment: a.treatment.clone(),
            pair_id: a.pair_id.clone(),
            x: a.x.clone(),
            w: a.w.clone(),
            methods,
            alpha: a.alpha,
            delta_null: a.delta0,
            include_intercept: a.include_intercept,
            lasso_basis: a.lasso_basis,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> CliResult<()> {
        if self.methods.is_empty() {
            return Err(CliError::Usage("no methods requested".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Usage(format!(
                "--alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        let mut seen = std::collections::HashSet::new();
        let bound = [&self.outcome, &self.treatment, &self.pair_id]
            .into_iter()
            .chain(&self.x)
            .chain(&self.w);
        for name in bound {
            if !seen.insert(name.as_str()) {
                return Err(CliError::Usage(format!("column '{name}' is bound more than once")));
            }
        }
        let needs_w = self
            .methods
            .iter()
            .any(|k| !k.is_lasso() && *k != AdjustmentKind::Unadjusted);
        if needs_w && self.w.is_empty() {
            return Err(CliError::Usage("linear adjustments need --w columns".into()));
        }
        Ok(())
    }

    /// Estimator specifications in request order. Linear adjustments use the
    /// w columns; LASSO-based ones use the configured basis.
    pub fn specs(&self) -> Vec<AdjustmentSpec> {
        self.methods
            .iter()
            .map(|&kind| {
                let psi = match (kind.is_lasso(), self.lasso_basis) {
                    (false, _) => PsiSource::W,
                    (true, LassoBasis::Raw) => PsiSource::XW,
                    (true, LassoBasis::Expanded) => PsiSource::Expanded(CrossTerms::All),
                };
                AdjustmentSpec::new(kind, psi).with_intercept(self.include_intercept)
            })
            .collect()
    }
}

/// A headed CSV file held as strings.
pub(crate) struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| CliError::Data(format!("cannot read header of {}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = reader
            .records()
            .map(|r| {
                r.map(|rec| rec.iter().map(str::to_string).collect())
                    .map_err(|e| CliError::Data(format!("malformed row in {}: {e}", path.display())))
            })
            .collect::<CliResult<Vec<Vec<String>>>>()?;
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("column '{name}' not found")))
    }

    pub fn number(&self, row: usize, col: usize) -> CliResult<f64> {
        let raw = &self.rows[row][col];
        raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
            CliError::Data(format!(
                "row {}: column '{}' is not a finite number: '{raw}'",
                row + 1,
                self.headers[col]
            ))
        })
    }
}

/// Builds the experiment; pairs are ordered by first appearance of their id.
pub(crate) fn load_experiment(table: &Table, cfg: &AnalyzeConfig) -> CliResult<ExperimentData> {
    let y_col = table.column(&cfg.outcome)?;
    let d_col = table.column(&cfg.treatment)?;
    let p_col = table.column(&cfg.pair_id)?;
    let x_cols = cfg.x.iter().map(|c| table.column(c)).collect::<CliResult<Vec<_>>>()?;
    let w_cols = cfg.w.iter().map(|c| table.column(c)).collect::<CliResult<Vec<_>>>()?;

    let mut units = Vec::with_capacity(table.rows.len());
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for r in 0..table.rows.len() {
        let d = match table.number(r, d_col)? {
            0.0 => 0,
            1.0 => 1,
            v => {
                return Err(CliError::Data(format!(
                    "row {}: treatment must be 0 or 1, got {v}",
                    r + 1
                )))
            }
        };
        let x = x_cols
            .iter()
            .map(|&c| table.number(r, c))
            .collect::<CliResult<Vec<_>>>()?;
        let w = w_cols
            .iter()
            .map(|&c| table.number(r, c))
            .collect::<CliResult<Vec<_>>>()?;
        units.push(UnitRecord::new((r + 1).to_string(), table.number(r, y_col)?, d, x, w));
        let id = table.rows[r][p_col].as_str();
        let g = *index.entry(id).or_insert_with(|| {
            groups.push((id.to_string(), Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(r);
    }
    let mut pairs = Vec::with_capacity(groups.len());
    for (j, (id, members)) in groups.iter().enumerate() {
        if members.len() != 2 {
            return Err(CliError::Data(format!(
                "pair '{id}' (pair {}) has {} units; each pair needs exactly two",
                j + 1,
                members.len()
            )));
        }
        let treated = units[members[0]].d + units[members[1]].d;
        if treated != 1 {
            return Err(CliError::Data(format!(
                "pair '{id}' (pair {}) has {treated} treated units; each pair needs exactly one",
                j + 1
            )));
        }
        pairs.push((members[0], members[1]));
    }
    let plan = PairingPlan::new(pairs)?;
    Ok(ExperimentData::new(units, plan)?)
}

/// Runs every configured method in request order.
pub fn analyze(cfg: &AnalyzeConfig) -> CliResult<Vec<EstimateReport>> {
    let table = Table::read(&cfg.data_path)?;
    let data = load_experiment(&table, cfg)?;
    cfg.specs()
        .iter()
        .map(|spec| {
            estimate(&data, spec, cfg.alpha, cfg.delta_null).map_err(|e| CliError::Data(format!("{}: {e}", spec.label)))
        })
        .collect()
}

pub(super) fn cmd_analyze(a: AnalyzeArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = AnalyzeConfig::from_args(&a)?;
    let reports = analyze(&cfg)?;
    with_output(a.out.as_deref(), stdout, |w| match a.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, &reports).map_err(|e| CliError::Data(e.to_string()))?;
            writeln!(w)?;
            Ok(())
        }
        Format::Csv => {
            let mut out = csv::Writer::from_writer(w);
            let csv_err = |e: csv::Error| CliError::Data(format!("writing report: {e}"));
            out.write_record([
                "method",
                "delta_hat",
                "std_error",
                "sigma_hat",
                "ci_lower",
                "ci_upper",
                "alpha",
                "delta_null",
                "reject_h0",
                "n_pairs",
            ])
            .map_err(csv_err)?;
            for r in &reports {
                out.write_record([
                    r.method.clone(),
                    fmt12(r.delta_hat),
                    fmt12(r.std_error),
                    fmt12(r.sigma_hat),
                    fmt12(r.ci_lower),
                    fmt12(r.ci_upper),
                    fmt12(r.alpha),
                    fmt12(r.delta_null),
                    r.reject_h0.to_string(),
                    r.n_pairs.to_string(),
                ])
                .map_err(csv_err)?;
            }
            out.flush()?;
            Ok(())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Table {
        let mut lines = text.lines();
        let headers = lines.next().unwrap().split(',').map(str::to_string).collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Table { headers, rows }
    }

    fn config(methods: Vec<AdjustmentKind>) -> AnalyzeConfig {
        AnalyzeConfig {
            data_path: PathBuf::new(),
            outcome: "y".into(),
            treatment: "d".into(),
            pair_id: "pair".into(),
            x: vec!["x".into()],
            w: vec![],
            methods,
            alpha: 0.05,
            delta_null: 0.0,
            include_intercept: false,
            lasso_basis: LassoBasis::Raw,
        }
    }

    #[test]
    fn pairs_follow_first_appearance() {
        let t = table("pair,y,d,x\nb,1,0,0\na,3,1,5\nb,3,1,0\na,2,0,5");
        let data = load_experiment(&t, &config(vec![AdjustmentKind::Unadjusted])).unwrap();
        assert_eq!(data.plan().pairs(), &[(0, 2), (1, 3)]);
    }

    #[test]
    fn bad_pair_is_named() {
        let t = table("pair,y,d,x\np1,1,1,0\np1,3,0,0\np2,3,1,1\np2,2,1,1");
        let err = load_experiment(&t, &config(vec![AdjustmentKind::Unadjusted])).unwrap_err();
        assert!(matches!(&err, CliError::Data(m) if m.contains("'p2'") && m.contains("pair 2")));
    }

    #[test]
    fn duplicate_bindings_and_missing_w_are_usage_errors() {
        let mut cfg = config(vec![AdjustmentKind::Pfe]);
        assert!(matches!(cfg.check(), Err(CliError::Usage(_))));
        cfg.w = vec!["x".into()];
        assert!(matches!(cfg.check(), Err(CliError::Usage(_))));
    }
}
