use boltzgap::assembly::{assemble_direct, DirectOptions};
use boltzgap::constraints::constraint_matrix;
use boltzgap::grad::{assemble_grad, GradQuadrature};
use boltzgap::kernels::NuProfile;
use boltzgap::mesh::{build_mesh, BasisSpec, OperatorParams, Representation};
use boltzgap::spectra::{spectral_gap, GapMethod};

fn pair(v: f64, n: usize, gamma: f64, tri: usize) -> (f64, f64) {
    let basis = BasisSpec::new(0).unwrap();
    let params = OperatorParams::new(2, gamma, -1.0).unwrap();
    let mesh = build_mesh(v, n, 2).unwrap();
    let mut opts = DirectOptions::default();
    opts.rule.points_per_triangle = tri;
    let gd = assemble_direct(&mesh, &basis, &params, &opts).unwrap();
    let csd = constraint_matrix(&mesh, &basis, Representation::GRep);
    let sd = spectral_gap(&gd, &csd, GapMethod::Nullspace).unwrap();
    let nu = NuProfile::for_mesh(params, &mesh).unwrap();
    let gg = assemble_grad(&mesh, &basis, &params, &nu, &GradQuadrature::accurate(2), 3 << 30).unwrap();
    let csg = constraint_matrix(&mesh, &basis, Representation::FRep);
    let sg = spectral_gap(&gg, &csg, GapMethod::Nullspace).unwrap();
    (sd.gap, sg.gap)
}

fn main() {
    println!("fine-N convergence at V=4 (tri=6):");
    for gamma in [0.0, 1.0] {
        for n in [12usize, 16, 24] {
            let (d, g) = pair(4.0, n, gamma, 6);
            println!("  gamma={gamma} N={n}: direct={d:.6} grad={g:.6} rel {:.2}%", 100.0*(d-g).abs()/g);
        }
    }
    println!("criterion grid with default tri=3:");
    for v in [3.0, 3.5] {
        for gamma in [0.0, 1.0] {
            for n in [4usize, 8] {
                let (d, g) = pair(v, n, gamma, 3);
                println!("  V={v} gamma={gamma} N={n}: direct={d:.6} grad={g:.6} rel {:.2}%", 100.0*(d-g).abs()/g);
            }
        }
    }
}
