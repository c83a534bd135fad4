//! The four command verbs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use mdis_core::averaging::rough_potential_constants;
use mdis_core::experiment::{
    run, verify_subsolution_binding, ExampleId, ExperimentSpec, Method,
};

use crate::csv::{append_rows, ResultRow};
use crate::CliError;

/// `constants`: homogenization constants of the rough potential, printed as
/// a short summary plus machine-readable `key=value` lines.
pub fn constants(d: f64, n_nodes: usize) -> Result<String, CliError> {
    let c = rough_potential_constants(d, n_nodes)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let mut out = String::new();
    out.push_str(&format!(
        "rough-potential constants at D = {d} (composite Simpson, {n_nodes} subintervals)\n"
    ));
    out.push_str(&format!("L={:.10e}\n", c.l));
    out.push_str(&format!("L_hat={:.10e}\n", c.l_hat));
    out.push_str(&format!("kappa={:.10e}\n", c.kappa_hom));
    Ok(out)
}

/// `verify-subsolution`: numerical sweep of the study's subsolution binding
/// on the default grid. Returns the report text and whether it passed.
pub fn verify(spec: &ExperimentSpec) -> Result<(String, bool), CliError> {
    let report = verify_subsolution_binding(spec)?;
    let mut text = String::new();
    text.push_str(&format!(
        "subsolution sweep: example {}, method {}, eps={}, delta={}\n",
        spec.example, spec.method, spec.epsilon, spec.delta
    ));
    text.push_str(&report.to_key_values());
    Ok((text, report.pass))
}

/// `run`: one estimation run; echoes a summary and appends a CSV row.
pub fn run_experiment(spec: &ExperimentSpec, out_path: &Path) -> Result<String, CliError> {
    spec.validate()?;
    let start = Instant::now();
    let result = run(spec)?;
    let wall = start.elapsed().as_secs_f64();
    let row = ResultRow::from_run(spec.example, spec.method, spec.epsilon, spec.delta, &result, wall);
    append_rows(out_path, std::slice::from_ref(&row))?;
    let o = &result.output;
    Ok(format!(
        "example {} method {} eps={} delta={} ({}, j={:.3})\n\
         theta_hat = {:.6e}\n\
         rel_err_per_sample = {:.4}\n\
         std_error = {:.4e}\n\
         n_samples = {}, blowups = {}, seed = {}, variant = {}\n\
         wall_time = {:.2}s, appended to {}\n",
        spec.example,
        spec.method,
        spec.epsilon,
        spec.delta,
        result.regime,
        result.j_value,
        o.theta_hat,
        o.rel_err_per_sample,
        o.std_error,
        o.n_samples,
        o.n_blowups,
        o.seed,
        crate::csv::variant_label(result.variant),
        wall,
        out_path.display(),
    ))
}

/// Built-in row schedules of the four published comparison tables.
pub fn preset(name: &str) -> Result<(ExampleId, Vec<(f64, f64)>, Vec<Method>), CliError> {
    match name {
        "table1" => Ok((
            ExampleId::Three,
            vec![
                (0.25, 0.1),
                (0.125, 0.04),
                (0.0625, 0.015),
                (0.03125, 0.007),
                (0.025, 0.005),
                (0.02, 0.003),
            ],
            vec![Method::Nmc, Method::Ld, Method::Md],
        )),
        "table2" => Ok((
            ExampleId::Two,
            vec![
                (0.5, 0.3),
                (0.25, 0.1),
                (0.125, 0.04),
                (0.0625, 0.015),
                (0.03125, 0.0065),
                (0.025, 0.0045),
            ],
            vec![Method::Nmc, Method::Md],
        )),
        "table3" => Ok((
            ExampleId::Two,
            vec![
                (0.5, 0.5),
                (0.25, 0.25),
                (0.125, 0.125),
                (0.0625, 0.0625),
                (0.03125, 0.03125),
                (0.025, 0.025),
                (0.015, 0.015),
            ],
            vec![Method::Nmc, Method::Md],
        )),
        "table4" => Ok((
            ExampleId::One,
            vec![
                (0.5, 0.5),
                (0.3, 0.3),
                (0.1, 0.1),
                (0.07, 0.07),
                (0.05, 0.05),
                (0.03, 0.03),
            ],
            vec![Method::Nmc, Method::Md],
        )),
        other => Err(CliError::Validation(format!(
            "unknown preset `{other}` (expected table1..table4)"
        ))),
    }
}

pub struct TableJob {
    pub example: ExampleId,
    pub rows: Vec<(f64, f64)>,
    pub methods: Vec<Method>,
    pub base: ExperimentSpec,
    pub out_path: PathBuf,
}

/// `table`: one CSV row per `(epsilon, delta, method)`. A failed cell is
/// recorded with an error marker and the table continues.
pub fn run_table(job: &TableJob) -> Result<String, CliError> {
    if job.methods.is_empty() {
        append_rows(&job.out_path, &[])?;
        return Ok(format!(
            "no methods requested; wrote header only to {}\n",
            job.out_path.display()
        ));
    }
    let mut log = String::new();
    for &(epsilon, delta) in &job.rows {
        for &method in &job.methods {
            let mut spec =
                ExperimentSpec::defaults(job.example, method, epsilon, delta);
            spec.h_exponent = job.base.h_exponent;
            spec.d = job.base.d;
            spec.t_end = job.base.t_end;
            spec.x0 = job.base.x0;
            spec.y0 = job.base.y0;
            spec.gamma_target = job.base.gamma_target;
            spec.n_samples = job.base.n_samples;
            spec.base_seed = job.base.base_seed;
            spec.workers = job.base.workers;
            spec.variant = job.base.variant;
            let start = Instant::now();
            let row = match spec.validate().map_err(Into::into).and_then(|_| {
                run(&spec).map_err(CliError::from)
            }) {
                Ok(result) => {
                    let wall = start.elapsed().as_secs_f64();
                    log.push_str(&format!(
                        "eps={epsilon} delta={delta} {method}: theta_hat={:.4e} rho={:.3} ({wall:.1}s)\n",
                        result.output.theta_hat, result.output.rel_err_per_sample,
                    ));
                    ResultRow::from_run(job.example, method, epsilon, delta, &result, wall)
                }
                Err(err) => {
                    log.push_str(&format!(
                        "eps={epsilon} delta={delta} {method}: FAILED ({err})\n"
                    ));
                    ResultRow::error_marker(
                        job.example,
                        method,
                        mdis_core::experiment::infer_regime(epsilon, delta),
                        epsilon,
                        delta,
                        spec.base_seed,
                        &err.to_string(),
                    )
                }
            };
            append_rows(&job.out_path, std::slice::from_ref(&row))?;
        }
    }
    log.push_str(&format!("table written to {}\n", job.out_path.display()));
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_output_contains_key_values() {
        let out = constants(1.0, 4096).unwrap();
        assert!(out.contains("L_hat=9.839"));
        assert!(out.contains("kappa=4.07"));
        // flat-potential limit
        let out = constants(1e9, 4096).unwrap();
        let kappa_line = out.lines().find(|l| l.starts_with("kappa=")).unwrap();
        let v: f64 = kappa_line.trim_start_matches("kappa=").parse().unwrap();
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constants_identical_at_higher_resolution() {
        // 10-digit printouts agree between 4096 and 8192 subintervals
        let a = constants(1.0, 4096).unwrap();
        let b = constants(1.0, 8192).unwrap();
        let pick = |s: &str, key: &str| -> String {
            s.lines()
                .find(|l| l.starts_with(key))
                .unwrap()
                .to_string()
        };
        assert_eq!(pick(&a, "L="), pick(&b, "L="));
        assert_eq!(pick(&a, "L_hat="), pick(&b, "L_hat="));
        assert_eq!(pick(&a, "kappa="), pick(&b, "kappa="));
    }

    #[test]
    fn presets_cover_published_schedules() {
        let (ex, rows, methods) = preset("table4").unwrap();
        assert_eq!(ex, ExampleId::One);
        assert_eq!(rows[0], (0.5, 0.5));
        assert_eq!(rows.len(), 6);
        assert_eq!(methods, vec![Method::Nmc, Method::Md]);
        let (_, rows, _) = preset("table2").unwrap();
        assert!(rows.contains(&(0.0625, 0.015)));
        assert!(preset("table9").is_err());
    }

    #[test]
    fn empty_methods_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let out_path = dir.path().join("t.csv");
        let job = TableJob {
            example: ExampleId::One,
            rows: vec![(0.5, 0.5)],
            methods: vec![],
            base: ExperimentSpec::defaults(ExampleId::One, Method::Nmc, 0.5, 0.5),
            out_path: out_path.clone(),
        };
        run_table(&job).unwrap();
        let text = std::fs::read_to_string(&out_path).unwrap();
        assert_eq!(text.trim(), crate::csv::HEADER);
    }

    #[test]
    fn failed_cell_gets_error_marker_and_table_continues() {
        let dir = tempfile::tempdir().unwrap();
        let out_path = dir.path().join("t.csv");
        let mut base = ExperimentSpec::defaults(ExampleId::Two, Method::Ld, 0.5, 0.3);
        base.n_samples = 100;
        let job = TableJob {
            example: ExampleId::Two,
            rows: vec![(0.5, 0.3)],
            methods: vec![Method::Ld, Method::Nmc], // ld invalid for example 2
            base,
            out_path: out_path.clone(),
        };
        run_table(&job).unwrap();
        let rows = crate::csv::read_rows(&out_path).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].subsolution_variant.starts_with("error("));
        assert!(rows[1].theta_hat.is_finite());
    }
}
