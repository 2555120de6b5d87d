use std::fs;
use std::path::Path;
use std::process::Command;

use capa::cli::{self, Overrides};
use capa::Error;

const BIN: &str = env!("CARGO_BIN_EXE_capa");

const HEAD: &str = r#"
[carrier]
frequency_hz = 3.0e9

[aperture.tx]
size_m = [0.2, 0.2]

[aperture.rx]
center_m = [0.0, 2.0, 0.0]
size_m = [0.2, 0.2]
"#;

fn scenario(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, format!("{HEAD}{body}")).unwrap();
    p
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn validation_messages(e: Error) -> Vec<String> {
    match e {
        Error::Validation(v) => v,
        other => panic!("expected a validation error, got {other}"),
    }
}

#[test]
fn capacity_outputs_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "cap.toml", "[channel]\nmodel = \"los\"\n[task.capacity]\npower = 10.0\nnoise = 1e-3\n");
    let out = dir.path().join("out");
    let rep = cli::execute(&sc, Some("capacity"), &Overrides::default(), &out).unwrap();
    assert_eq!(rep.outputs, ["capacity.csv", "capacity_summary.csv"]);
    assert_eq!(header(&out.join("capacity.csv")), "index,sigma,mu,power");
    assert_eq!(header(&out.join("capacity_summary.csv")), "capacity_bits,water_level,numeric_dof,kolmogorov_bits");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["task"], "capacity");
    assert_eq!(report["scenario"]["carrier"]["frequency_hz"], 3.0e9);
    assert!(report["results"]["capacity_bits"].as_f64().unwrap() > 0.0);
    let mut rdr = csv::Reader::from_path(out.join("capacity.csv")).unwrap();
    let powers: f64 = rdr.records().map(|r| r.unwrap()[3].parse::<f64>().unwrap()).sum();
    assert!((powers - 10.0).abs() < 1e-9);
}

#[test]
fn every_task_writes_its_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("dof_sweep", "[task.dof_sweep]\ndistances_m = [1.0, 2.0]\nmethod = \"fft\"\n", vec![("dof.csv", "distance_m,landau,numeric_dof"), ("spectrum.csv", "distance_m,index,sigma,mu")]),
        (
            "beamform",
            "[task.beamform]\nscheme = \"mmse\"\nusers = 3\nnoise = 1e-6\n",
            vec![
                ("beamform.csv", "user,sinr,sinr_db,power"),
                ("beamform_summary.csv", "scheme,total_power,sum_rate_bits,converged,iterations,gram_condition"),
                ("beam_coefficients.csv", "user,index,re,im"),
            ],
        ),
        (
            "estimate",
            "[task.estimate]\nplanted = 2\nsparsity = 2\n",
            vec![("estimate.csv", "index,re,im"), ("estimate_summary.csv", "atoms,tau_p,support_size,residual_norm,nmse")],
        ),
        (
            "channel_sample",
            "[channel]\nmodel = \"correlation\"\ncells_per_axis = 10\n[task.channel_sample]\n",
            vec![("channel.csv", "rx_node,tx_node,rx_x_m,rx_z_m,tx_x_m,tx_z_m,re,im")],
        ),
        (
            "channel_sample",
            "[channel]\nmodel = \"los\"\n[task.channel_sample]\nrepresentation = \"wavenumber\"\n",
            vec![("spectral_channel.csv", "rx_m,rx_n,tx_m,tx_n,re,im")],
        ),
        ("coupling", "[task.coupling]\npixels = [2, 2]\nsurface_resistance = 0.01\n", vec![("power_matrices.csv", "matrix,m,n,re,im")]),
        ("power", "[task.power]\npixels = [2, 2]\nsamples = 5\n", vec![("power.csv", "sample,p_rad,p_rad_bound,p_loss")]),
    ];
    for (k, (task, body, files)) in cases.iter().enumerate() {
        let sc = scenario(dir.path(), &format!("s{k}.toml"), body);
        let out = dir.path().join(format!("out{k}"));
        let rep = cli::execute(&sc, Some(task), &Overrides::default(), &out).unwrap_or_else(|e| panic!("{task}: {e}"));
        assert_eq!(rep.task, *task);
        for (name, head) in files {
            assert_eq!(header(&out.join(name)), *head, "{task}/{name}");
        }
        assert!(out.join("report.json").is_file());
    }
}

#[test]
fn planted_estimate_recovers_support() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "e.toml", "[task.estimate]\nplanted = 2\nsparsity = 2\n");
    let rep = cli::execute(&sc, None, &Overrides { seed: Some(4), quadrature_order: None }, &dir.path().join("o")).unwrap();
    assert_eq!(rep.results["support"], rep.results["planted_support"]);
    assert!(rep.results["nmse"].as_f64().unwrap() < 1e-12);
}

#[test]
fn misspelled_section_gets_a_suggestion() {
    let text = "[carrier]\nfrequency_hz = 3e9\n[apperture.tx]\nsize_m = [0.2, 0.2]\n[task.coupling]\n";
    let msgs = validation_messages(cli::parse_scenario_str(text).unwrap_err());
    assert!(msgs.iter().any(|m| m.contains("'apperture'") && m.contains("did you mean 'aperture'")), "{msgs:?}");
}

#[test]
fn all_problems_are_reported_together() {
    let text = "[carrier]\nfrequency_hz = -1.0\n[aperture.tx]\nsize_m = [0.2]\n[task.power]\ncurents = \"random\"\n";
    let msgs = validation_messages(cli::parse_scenario_str(text).unwrap_err());
    assert!(msgs.len() >= 3, "{msgs:?}");
    assert!(msgs.iter().any(|m| m.contains("did you mean 'currents'")));
}

#[test]
fn two_tasks_are_rejected() {
    let text = format!("{HEAD}[task.coupling]\n[task.power]\n");
    let msgs = validation_messages(cli::parse_scenario_str(&text).unwrap_err());
    assert!(msgs.iter().any(|m| m.contains("exactly one")), "{msgs:?}");
}

#[test]
fn missing_channel_block_is_named() {
    let text = format!("{HEAD}[task.capacity]\n");
    let msgs = validation_messages(cli::parse_scenario_str(&text).unwrap_err());
    assert!(msgs.iter().any(|m| m.contains("[channel]")), "{msgs:?}");
}

#[test]
fn subcommand_must_match_task() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "c.toml", "[task.coupling]\n");
    let e = cli::execute(&sc, Some("capacity"), &Overrides::default(), &dir.path().join("o")).unwrap_err();
    assert!(e.to_string().contains("task.capacity"));
}

#[test]
fn library_errors_name_their_section() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "e.toml", "[task.estimate]\nplanted = 100000\n");
    let e = cli::execute(&sc, None, &Overrides::default(), &dir.path().join("o")).unwrap_err();
    assert!(e.to_string().starts_with("[task.estimate]"), "{e}");
}

#[test]
fn runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let body = "[channel]\nmodel = \"rician\"\nk_factor = 1.0\ncells_per_axis = 10\n[task.channel_sample]\n[numerics]\nseed = 11\n";
    let sc = scenario(dir.path(), "d.toml", body);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cli::execute(&sc, None, &Overrides::default(), &a).unwrap();
    cli::execute(&sc, None, &Overrides::default(), &b).unwrap();
    assert_eq!(fs::read(a.join("channel.csv")).unwrap(), fs::read(b.join("channel.csv")).unwrap());
    let c = dir.path().join("c");
    cli::execute(&sc, None, &Overrides { seed: Some(12), quadrature_order: None }, &c).unwrap();
    assert_ne!(fs::read(a.join("channel.csv")).unwrap(), fs::read(c.join("channel.csv")).unwrap());
}

#[test]
fn binary_exit_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let good = scenario(dir.path(), "g.toml", "[task.coupling]\npixels = [2, 1]\n");
    let out = dir.path().join("o");
    let st = Command::new(BIN).args(["coupling", good.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(out.join("power_matrices.csv").is_file());

    let st = Command::new(BIN).args(["validate", good.to_str().unwrap()]).output().unwrap();
    assert!(st.status.success());
    assert_eq!(String::from_utf8_lossy(&st.stdout).trim(), "ok: task coupling");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[carrier]\nfrequency_hz = 3e9\n[apperture.tx]\nsize_m = [0.2, 0.2]\n[task.coupling]\n").unwrap();
    let st = Command::new(BIN).args(["validate", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("did you mean 'aperture'"));

    let st = Command::new(BIN).args(["run", dir.path().join("nope.toml").to_str().unwrap()]).output().unwrap();
    assert_eq!(st.status.code(), Some(3));
}
