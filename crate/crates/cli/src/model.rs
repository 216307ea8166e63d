use std::io::Write;

use anyhow::Context;
use hisq_core::perfmodel::{efficiency, roofline_predict, StorageSelection};

use crate::args::{GlobalOpts, ModelCommand};
use crate::common::{self, Failure};

const DEFAULT_RHS: [usize; 7] = [1, 2, 3, 4, 5, 6, 8];

pub fn run(g: &GlobalOpts, cmd: &ModelCommand) -> Result<(), Failure> {
    let rhs = g.rhs.as_ref().map(|r| r.0.clone()).unwrap_or_else(|| DEFAULT_RHS.to_vec());
    let storages = g.reconstruct.unwrap_or(StorageSelection::Both).storages();
    let model = common::cost_model(g);
    let mut lines = Vec::new();
    match cmd {
        ModelCommand::Intensity => {
            lines.push("n_rhs,storage,precision,intensity,exact".to_string());
            for &s in &storages {
                for &n in &rhs {
                    let ai = model.arithmetic_intensity(n, s, g.precision);
                    lines.push(format!("{n},{s},{},{ai:.2},{ai:.6}", g.precision));
                }
            }
            lines.push(format!("inf,any,{},{:.2},{:.6}", g.precision, model.asymptotic_intensity(g.precision), model.asymptotic_intensity(g.precision)));
        }
        ModelCommand::Roofline => {
            let catalog = common::catalog(g)?;
            let devices = match &g.device {
                Some(name) => vec![catalog.lookup(name).map_err(|e| Failure::Usage(e.to_string()))?.clone()],
                None => catalog.devices().to_vec(),
            };
            lines.push("device,n_rhs,storage,precision,bandwidth_kind,bandwidth_gbs,intensity,predicted_gflops".into());
            for d in &devices {
                for &s in &storages {
                    for &n in &rhs {
                        let mut kinds = vec![("theoretical", false, d.bandwidth)];
                        if let Some(m) = d.measured_bandwidth {
                            kinds.push(("measured", true, m));
                        }
                        for (kind, measured, bw) in kinds {
                            let p = roofline_predict(d, n, s, g.precision, measured).map_err(anyhow::Error::from)?;
                            let ai = model.arithmetic_intensity(n, s, g.precision);
                            lines.push(format!("{},{n},{s},{},{kind},{bw},{ai:.4},{p:.1}", d.name, g.precision));
                        }
                    }
                }
            }
        }
        ModelCommand::Devices => {
            lines.push("name,aliases,peak_fp32,peak_fp64,bandwidth,measured_bandwidth,tdp".into());
            for d in common::catalog(g)?.devices() {
                lines.push(format!(
                    "{},{},{},{},{},{},{}",
                    d.name,
                    d.aliases.join(";"),
                    d.peak_fp32,
                    d.peak_fp64,
                    d.bandwidth,
                    d.measured_bandwidth.map(|m| m.to_string()).unwrap_or_default(),
                    d.tdp
                ));
            }
        }
        ModelCommand::Efficiency { gflops, watts } => {
            let e = efficiency(*gflops, *watts).map_err(|e| Failure::Usage(e.to_string()))?;
            lines.push("gflops,watts,gflops_per_watt".into());
            lines.push(format!("{gflops},{watts},{e:.4}"));
        }
    }
    let mut out = common::output(g)?;
    for l in &lines {
        common::write_line(&mut out, l)?;
    }
    out.flush().context("flushing output")?;
    Ok(())
}
