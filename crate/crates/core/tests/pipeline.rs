use porecarbon::analysis::{export_trajectory, import_trajectory, CSV_HEADER};
use porecarbon::diffusion::DiffusionOperator;
use porecarbon::image_io::{load_volume, save_volume, synth_volume, CropRegion, Shape, SynthSpec};
use porecarbon::integrator::{Integrator, SolverConfig};
use porecarbon::kinetics::BioParams;
use porecarbon::network::{export_network, extract_network, import_network};
use porecarbon::scenario::{export_state, generate, import_state, DomMode, ScenarioSpec};

fn blobs() -> SynthSpec {
    SynthSpec {
        dims: [30, 30, 30],
        resolution_um: 24.0,
        shapes: vec![Shape::Blobs {
            count: 8,
            min_radius: 2.0,
            max_radius: 4.0,
            seed: 9,
        }],
    }
}

#[test]
fn volume_to_trajectory_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);

    let img = synth_volume(&blobs()).unwrap();
    save_volume(&img, p("v.raw"), p("v.json"), 255).unwrap();
    let back = load_volume(p("v.raw"), p("v.json")).unwrap();
    assert_eq!(back, img);

    let net = extract_network(&back, "blobs").unwrap();
    export_network(&net, p("net.json")).unwrap();
    let net = import_network(p("net.json")).unwrap();
    assert!(net.node_count() > 10);
    assert!(net.node_count() <= img.pore_count());

    let op = DiffusionOperator::assemble(&net).unwrap();
    let cols = op.column_sums();
    assert!(cols.iter().all(|c| c.abs() <= 1e-12));

    let (s0, summary) = generate(
        &net,
        &ScenarioSpec {
            dom_mode: DomMode::Homogeneous,
            seed: 3,
            ..ScenarioSpec::default()
        },
    )
    .unwrap();
    export_state(&s0, p("s0.json")).unwrap();
    assert_eq!(import_state(p("s0.json")).unwrap(), s0);
    assert!((summary.initial_mb / summary.initial_dom - summary.mb_fraction).abs() < 1e-12);

    let cfg = SolverConfig {
        t_end: 20.0,
        snapshot_stride: 200,
        ..SolverConfig::default()
    };
    let traj = Integrator::new(&net, BioParams::default(), cfg)
        .unwrap()
        .run(&s0, &mut [])
        .unwrap();
    assert_eq!(traj.records.len(), 11);
    export_trajectory(&traj, p("t.csv")).unwrap();
    let text = std::fs::read_to_string(p("t.csv")).unwrap();
    assert!(text.starts_with(CSV_HEADER));
    let parsed = import_trajectory(p("t.csv")).unwrap();
    for (a, b) in parsed.records.iter().zip(&traj.records) {
        assert_eq!(a.t, b.t);
        assert_eq!(a.agg1, b.agg1);
    }
}

#[test]
fn crop_then_extract_matches_direct_synthesis() {
    let img = synth_volume(&blobs()).unwrap();
    let region = CropRegion::new([5, 5, 5], [25, 25, 25]);
    let cropped = img.crop(&region).unwrap();
    assert_eq!(cropped.dims(), [20, 20, 20]);
    for z in 0..20 {
        for y in 0..20 {
            for x in 0..20 {
                assert_eq!(cropped.is_pore(x, y, z), img.is_pore(x + 5, y + 5, z + 5));
            }
        }
    }
    let net = extract_network(&cropped, "crop").unwrap();
    let h = cropped.resolution();
    for b in &net.balls {
        assert!(b.center.iter().all(|&c| c > 0.0 && c < 20.0 * h));
    }
}

#[test]
fn repeated_extraction_is_identical() {
    let img = synth_volume(&blobs()).unwrap();
    let a = extract_network(&img, "a").unwrap();
    let b = extract_network(&img, "a").unwrap();
    assert_eq!(a, b);
}
