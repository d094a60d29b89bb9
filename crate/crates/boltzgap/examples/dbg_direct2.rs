use boltzgap::assembly::{assemble_direct, quadratic_form, DirectOptions};
use boltzgap::constraints::constraint_matrix;
use boltzgap::grad::{assemble_grad, GradQuadrature};
use boltzgap::kernels::NuProfile;
use boltzgap::mesh::{build_mesh, l2_project, BasisSpec, OperatorParams, Representation};
use boltzgap::spectra::{spectral_gap, GapMethod};

fn main() {
    let basis = BasisSpec::new(0).unwrap();
    // numerator consistency on smooth test functions at moderate N
    {
        let params = OperatorParams::new(2, 0.0, -1.0).unwrap();
        let mesh = build_mesh(4.0, 16, 2).unwrap();
        let mut opts = DirectOptions::default();
        opts.rule.points_per_triangle = 6;
        let gd = assemble_direct(&mesh, &basis, &params, &opts).unwrap();
        let nu = NuProfile::for_mesh(params, &mesh).unwrap();
        let gg = assemble_grad(&mesh, &basis, &params, &nu, &GradQuadrature::accurate(2), 3 << 30).unwrap();
        for (name, g_fn) in [
            ("g=v1*|v|^2", (|v: &[f64]| v[0] * (v[0] * v[0] + v[1] * v[1])) as fn(&[f64]) -> f64),
            ("g=v1^2-1", |v: &[f64]| v[0] * v[0] - 1.0),
            ("g=exp(-|v|^2/4)", |v: &[f64]| (-0.25 * (v[0] * v[0] + v[1] * v[1])).exp()),
        ] {
            let gcoef = l2_project(g_fn, &mesh, &basis, Representation::GRep);
            let fcoef = l2_project(
                |v| g_fn(v) * boltzgap::kernels::maxwellian(v, 2).sqrt(),
                &mesh,
                &basis,
                Representation::FRep,
            );
            let qd = quadratic_form(&gd, &gcoef).unwrap();
            let qg = quadratic_form(&gg, &fcoef).unwrap();
            println!("{name}: direct form {qd:.6} grad form {qg:.6} rel {:.2}%", 100.0*(qd-qg).abs()/qg.abs());
        }
    }
    // V scan for the gap agreement
    for v in [2.5, 3.0, 4.0] {
        for gamma in [0.0, 1.0] {
            for n in [4usize, 8] {
                let params = OperatorParams::new(2, gamma, -1.0).unwrap();
                let mesh = build_mesh(v, n, 2).unwrap();
                let mut opts = DirectOptions::default();
                opts.rule.points_per_triangle = 6;
                let gd = assemble_direct(&mesh, &basis, &params, &opts).unwrap();
                let csd = constraint_matrix(&mesh, &basis, Representation::GRep);
                let sd = spectral_gap(&gd, &csd, GapMethod::Nullspace).unwrap();
                let nu = NuProfile::for_mesh(params, &mesh).unwrap();
                let gg = assemble_grad(&mesh, &basis, &params, &nu, &GradQuadrature::accurate(2), 3 << 30).unwrap();
                let csg = constraint_matrix(&mesh, &basis, Representation::FRep);
                let sg = spectral_gap(&gg, &csg, GapMethod::Nullspace).unwrap();
                println!(
                    "V={v} gamma={gamma} N={n}: direct={:.6} grad={:.6} rel {:.2}%",
                    sd.gap, sg.gap, 100.0 * (sd.gap - sg.gap).abs() / sg.gap
                );
            }
        }
    }
}
