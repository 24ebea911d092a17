//! Executes a prepared scenario: driver, checks, artifacts, exit code.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use angio_core::grid::lq_norm;
use angio_core::harness::{
    check_c_bounds, check_comparison, check_energy_trace, check_gronwall_forced, check_positivity, check_speed_bound,
    describe,
};
use angio_core::{
    picard_coupled, picard_pure, BoundCheck, CoupledSolution, EnergyTrace, LatticeField, MomentSet, PhaseField,
    PureSolution, SourceTrack, SpatialField, Trajectory,
};

use crate::export::{self, MomentRow};
use crate::report::{CheckEntry, Diagnostics, Report};
use crate::scenario::{Driver, Prepared};
use crate::{exit, snapshot, Error};

/// Radii tried by the speed-moment check, besides the cellwise optimum.
pub const SPEED_RADII: [f64; 3] = [0.5, 1.0, 2.0];
/// Lower bound of the Richardson-calibrated energy tolerance.
pub const ENERGY_TOL_FLOOR: f64 = 1e-10;
pub const DEFAULT_OUT_ROOT: &str = "angio-out";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Artifacts go to `<out_root>/<scenario name>`.
    pub out_root: Option<PathBuf>,
    /// Replaces every check tolerance.
    pub tol: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: u8,
    pub report: Report,
    pub out_dir: PathBuf,
}

pub enum Solved {
    Pure(PureSolution),
    Coupled(CoupledSolution),
}

impl Solved {
    pub fn p(&self) -> &Trajectory<PhaseField> {
        match self {
            Solved::Pure(s) => &s.p,
            Solved::Coupled(s) => &s.p,
        }
    }

    pub fn a(&self) -> &Trajectory<SpatialField> {
        match self {
            Solved::Pure(s) => &s.a,
            Solved::Coupled(s) => &s.a,
        }
    }

    pub fn diagnostics(&self) -> &angio_core::IterationDiagnostics {
        match self {
            Solved::Pure(s) => &s.diagnostics,
            Solved::Coupled(s) => &s.diagnostics,
        }
    }

    pub fn growth_rate(&self) -> f64 {
        match self {
            Solved::Pure(_) => 0.0,
            Solved::Coupled(s) => s.growth_rate,
        }
    }

    fn energy(&self) -> Option<&EnergyTrace> {
        match self {
            Solved::Pure(s) => s.energy.as_ref(),
            Solved::Coupled(s) => s.energy.as_ref(),
        }
    }
}

pub fn output_dir(prep: &Prepared, opts: &RunOptions) -> PathBuf {
    let name = &prep.scenario.name;
    match (&opts.out_root, &prep.scenario.output.dir) {
        (Some(root), _) => root.join(name),
        (None, Some(dir)) => dir.clone(),
        (None, None) => Path::new(DEFAULT_OUT_ROOT).join(name),
    }
}

pub fn solve(prep: &Prepared) -> Result<Solved, Error> {
    Ok(match prep.scenario.driver {
        Driver::Pure => Solved::Pure(picard_pure(
            &prep.p0,
            &prep.source,
            &prep.params,
            &prep.schedule,
            &prep.options,
        )?),
        Driver::Coupled => Solved::Coupled(picard_coupled(
            &prep.p0,
            prep.c0.as_ref().expect("coupled scenarios carry c0"),
            &prep.params,
            &prep.schedule,
            &prep.options,
        )?),
    })
}

/// Shared, read-only inputs of every check.
struct CheckContext<'a> {
    prep: &'a Prepared,
    solved: &'a Solved,
    moments: Vec<MomentSet>,
    p_tilde: Trajectory<SpatialField>,
    m: Trajectory<SpatialField>,
    source_moments: Option<(PhaseField, MomentSet)>,
    tol_override: Option<f64>,
}

impl CheckContext<'_> {
    fn tolerance(&self, name: &str) -> f64 {
        if let Some(t) = self.tol_override {
            return t;
        }
        if let Some(t) = self.prep.scenario.tolerances.get(name) {
            return *t;
        }
        if name == "energy" {
            if let Some(trace) = self.solved.energy() {
                return trace.richardson_tolerance(ENERGY_TOL_FLOOR);
            }
        }
        describe(name).map_or(1e-8, |c| c.default_tolerance)
    }

    fn forcing(&self, which: &str, q: f64) -> Result<f64, Error> {
        let Some((f, ms)) = &self.source_moments else {
            return Ok(0.0);
        };
        Ok(match which {
            "p" => lq_norm(f, q)?,
            "ptilde" => lq_norm(&ms.p_tilde, q)?,
            _ => lq_norm(&ms.m, q)?,
        })
    }

    fn evaluate(&self, name: &str) -> Result<BoundCheck, Error> {
        let tol = self.tolerance(name);
        let p = self.solved.p();
        let lambda = self.solved.growth_rate();
        let creation = 2.0 * self.prep.params.sigma * self.prep.grid.dim_v as f64;
        if let Some(rest) = name.strip_prefix("gronwall_") {
            let (which, norm) = rest.rsplit_once('_').expect("catalogue names");
            let q = match norm {
                "l1" => 1.0,
                "l2" => 2.0,
                _ => f64::INFINITY,
            };
            let forcing = self.forcing(which, q)?;
            return Ok(match which {
                "p" => check_gronwall_forced(name, p, lambda, q, forcing, tol)?,
                "ptilde" => check_gronwall_forced(name, &self.p_tilde, lambda, q, forcing, tol)?,
                _ => check_gronwall_forced(name, &self.m, lambda + creation, q, forcing, tol)?,
            });
        }
        let check = match (name, self.solved) {
            ("positivity_p", _) => check_positivity(name, p, tol)?,
            ("positivity_c", Solved::Coupled(s)) => check_positivity(name, &s.c, tol)?,
            ("comparison_upper", Solved::Pure(s)) => check_comparison(name, p, &s.upper, tol)?,
            ("comparison_majorant", Solved::Coupled(s)) => check_comparison(name, p, &s.majorant, tol)?,
            ("energy", Solved::Pure(s)) => {
                let trace = s
                    .energy
                    .as_ref()
                    .ok_or_else(|| Error::Config("energy check needs a recorded energy trace".into()))?;
                check_energy_trace(trace, p, tol)?
            }
            ("speed_bound", _) => check_speed_bound(&self.moments, &SPEED_RADII, tol)?,
            ("c_bounds", Solved::Coupled(s)) => {
                let c0_sup = self.prep.c0.as_ref().map_or(0.0, |c| c.max_abs());
                check_c_bounds(&s.c, &s.c_hat, c0_sup, tol)?
            }
            _ => return Err(Error::Config(format!("check `{name}` does not apply to this driver"))),
        };
        Ok(check)
    }
}

pub fn run_checks(prep: &Prepared, solved: &Solved, tol_override: Option<f64>) -> Result<Vec<BoundCheck>, Error> {
    let moments = solved
        .p()
        .frames
        .par_iter()
        .map(MomentSet::of)
        .collect::<Result<Vec<_>, _>>()?;
    let p_tilde = Trajectory::new(moments.iter().map(|m| m.p_tilde.clone()).collect());
    let m = Trajectory::new(moments.iter().map(|m| m.m.clone()).collect());
    let source_moments = match &prep.source {
        SourceTrack::Steady(f) => Some((f.clone(), MomentSet::of(f)?)),
        SourceTrack::Nodes(_) => {
            return Err(Error::Config(
                "time-dependent sources are not supported by the runner".into(),
            ))
        }
        SourceTrack::None => None,
    };
    let ctx = CheckContext {
        prep,
        solved,
        moments,
        p_tilde,
        m,
        source_moments,
        tol_override,
    };
    prep.checks.par_iter().map(|n| ctx.evaluate(n)).collect()
}

fn write_artifacts(prep: &Prepared, solved: &Solved, dir: &Path, report: &Report) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    let out = &prep.scenario.output;
    let p = solved.p();
    if out.snapshots {
        for (i, f) in p.iter().enumerate() {
            snapshot::write_phase(&dir.join(format!("p_{i:04}.akf")), f)?;
        }
        if let Solved::Coupled(s) = solved {
            for (i, (c, h)) in s.c.iter().zip(s.c_hat.iter()).enumerate() {
                snapshot::write_spatial(&dir.join(format!("c_{i:04}.akf")), c)?;
                snapshot::write_spatial(&dir.join(format!("c_hat_{i:04}.akf")), h)?;
            }
        }
    }
    let rows = p
        .frames
        .par_iter()
        .zip(solved.a().frames.par_iter())
        .map(|(f, a)| MomentRow::new(f, &MomentSet::of(f)?, a))
        .collect::<Result<Vec<_>, Error>>()?;
    export::to_file(&dir.join("moments.csv"), |w| export::write_moments_csv(w, &rows))?;
    if out.phase_csv {
        if let Some(last) = p.last() {
            export::to_file(&dir.join("p_final.csv"), |w| export::write_phase_csv(w, last))?;
        }
    }
    if let Solved::Coupled(s) = solved {
        if let (Some(c), Some(h)) = (s.c.last(), s.c_hat.last()) {
            export::to_file(&dir.join("c_final.csv"), |w| export::write_spatial_csv(w, c))?;
            export::to_file(&dir.join("c_hat_final.csv"), |w| export::write_spatial_csv(w, h))?;
        }
    }
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    std::fs::write(
        dir.join("checks.json"),
        serde_json::to_string_pretty(&report.checks)? + "\n",
    )?;
    std::fs::write(dir.join("summary.txt"), report.summary())?;
    Ok(())
}

/// Exit code for a finished run: non-convergence outranks check failures.
pub fn exit_code(converged: bool, checks: &[BoundCheck]) -> u8 {
    if !converged {
        exit::NOT_CONVERGED
    } else if checks.iter().any(|c| !c.passed()) {
        exit::CHECK_FAILED
    } else {
        exit::OK
    }
}

pub fn run(prep: &Prepared, opts: &RunOptions) -> Result<Outcome, Error> {
    let solved = solve(prep)?;
    let checks = run_checks(prep, &solved, opts.tol)?;
    let diagnostics = solved.diagnostics();
    let code = exit_code(diagnostics.converged(), &checks);
    let status = match code {
        exit::OK => "pass",
        exit::NOT_CONVERGED => "not_converged",
        _ => "check_failed",
    };
    let report = Report {
        scenario: prep.scenario.name.clone(),
        driver: prep.scenario.driver.as_str(),
        exit_code: code,
        status,
        failed_checks: checks.iter().filter(|c| !c.passed()).map(|c| c.name.clone()).collect(),
        growth_rate: solved.growth_rate(),
        warnings: prep.warnings.clone(),
        diagnostics: Diagnostics::from(diagnostics),
        checks: checks.iter().map(CheckEntry::from).collect(),
    };
    let out_dir = output_dir(prep, opts);
    write_artifacts(prep, &solved, &out_dir, &report)?;
    Ok(Outcome {
        exit_code: code,
        report,
        out_dir,
    })
}
