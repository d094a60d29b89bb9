use boltzgap::constraints::constraint_matrix;
use boltzgap::grad::{assemble_grad, GradQuadrature};
use boltzgap::kernels::NuProfile;
use boltzgap::mesh::{build_mesh, BasisSpec, OperatorParams, Representation};
use boltzgap::spectra::{spectral_gap, GapMethod};

fn main() {
    let params = OperatorParams::new(2, 0.0, -1.0).unwrap();
    for n in [8usize, 12, 16] {
        let mesh = build_mesh(5.0, n, 2).unwrap();
        let basis = BasisSpec::new(0).unwrap();
        let nu = NuProfile::for_mesh(params, &mesh).unwrap();
        let t0 = std::time::Instant::now();
        let g = assemble_grad(&mesh, &basis, &params, &nu, &GradQuadrature::accurate(2), 3 << 30).unwrap();
        let cs = constraint_matrix(&mesh, &basis, Representation::FRep);
        let spec = spectral_gap(&g, &cs, GapMethod::Nullspace).unwrap();
        println!("N={n:3} gap={:.6} err={:.4e} ({:.2}s)", spec.gap, (spec.gap - 0.25).abs(), t0.elapsed().as_secs_f64());
    }
}
