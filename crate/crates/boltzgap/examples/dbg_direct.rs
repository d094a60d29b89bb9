use boltzgap::assembly::{assemble_direct, DirectOptions};
use boltzgap::constraints::constraint_matrix;
use boltzgap::grad::{assemble_grad, GradQuadrature};
use boltzgap::kernels::NuProfile;
use boltzgap::mesh::{build_mesh, BasisSpec, OperatorParams, Representation};
use boltzgap::spectra::{spectral_gap, GapMethod};

fn main() {
    let basis = BasisSpec::new(0).unwrap();
    for gamma in [0.0, 1.0] {
        for n in [4usize, 8] {
            let params = OperatorParams::new(2, gamma, -1.0).unwrap();
            let mesh = build_mesh(4.0, n, 2).unwrap();
            let t0 = std::time::Instant::now();
            let mut opts = DirectOptions::default();
            opts.rule.points_per_triangle = std::env::var("TRI").ok().and_then(|s| s.parse().ok()).unwrap_or(3);
            let gd = assemble_direct(&mesh, &basis, &params, &opts).unwrap();
            let t_dir = t0.elapsed().as_secs_f64();
            let csd = constraint_matrix(&mesh, &basis, Representation::GRep);
            let sd = spectral_gap(&gd, &csd, GapMethod::Nullspace).unwrap();
            let nu = NuProfile::for_mesh(params, &mesh).unwrap();
            let gg = assemble_grad(&mesh, &basis, &params, &nu, &GradQuadrature::accurate(2), 3 << 30).unwrap();
            let csg = constraint_matrix(&mesh, &basis, Representation::FRep);
            let sg = spectral_gap(&gg, &csg, GapMethod::Nullspace).unwrap();
            println!(
                "gamma={gamma} N={n}: direct={:.6} grad={:.6} rel diff {:.3}% (direct {:.2}s, asym {:.2e})",
                sd.gap, sg.gap, 100.0 * (sd.gap - sg.gap).abs() / sg.gap, t_dir, gd.diagnostics.max_asym
            );
        }
    }
}
