use std::collections::BTreeMap;

use serde::Serialize;
use tnlayers::autodiff::AdjointFault;
use tnlayers::verify::{run_all, SuiteResult};

use crate::config::{Fault, RunConfig};
use crate::error::{io, CliError};
use crate::train::write_json;

#[derive(Serialize)]
struct Report<'a> {
    passed: bool,
    seed: u64,
    /// `name -> "pass" | "fail"`.
    summary: BTreeMap<&'a str, &'static str>,
    suites: &'a [SuiteResult],
}

pub fn run(c: &RunConfig, fault: Option<Fault>) -> Result<(), CliError> {
    let fault = fault.map(|f| match f {
        Fault::ContractLhsTwice => AdjointFault::ContractLhsTwice,
    });
    let suites = run_all(c.train.seed, fault);
    for s in &suites {
        println!(
            "{:<32} {}  max error {:.3e} (tolerance {:.0e}, {} checked)  {}",
            s.name,
            if s.passed { "pass" } else { "FAIL" },
            s.max_error,
            s.tolerance,
            s.checked,
            s.detail
        );
    }
    let passed = suites.iter().all(|s| s.passed);
    let report = Report {
        passed,
        seed: c.train.seed,
        summary: suites
            .iter()
            .map(|s| (s.name.as_str(), if s.passed { "pass" } else { "fail" }))
            .collect(),
        suites: &suites,
    };
    std::fs::create_dir_all(&c.out).map_err(|e| io(&c.out, e))?;
    write_json(&c.out.join("verify.json"), &report)?;
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = suites.iter().filter(|s| !s.passed).map(|s| s.name.as_str()).collect();
        Err(CliError::Verify(failed.join(", ")))
    }
}
