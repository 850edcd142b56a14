//! Generates a small pose-locked benchmark and lists its triplets. Output
//! directory is the first argument (default: a temp directory).

use facemotion::benchmark::{build_benchmark, BenchmarkSpec};
use facemotion::rig::SyntheticRigConfig;

fn main() -> facemotion::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("facemotion-benchmark"));
    let spec = BenchmarkSpec {
        n_identities: 2,
        n_expression_tracks: 4,
        frames_per_video: 30,
        image_size: [96, 96],
        rig: SyntheticRigConfig {
            n_vertices: 300,
            ..Default::default()
        },
        ..Default::default()
    };
    let manifest = build_benchmark(&spec, &out)?;
    for id in &manifest.identities {
        let names: Vec<&str> = id.videos.iter().map(|v| v.name.as_str()).collect();
        println!("{}: {}", id.identity.name, names.join(", "));
    }
    for t in &manifest.triplets {
        println!("{:?}: {} driven by {} (target {})", t.mode, t.source_path, t.driving_path, t.ground_truth_path);
    }
    println!("written to {}", out.display());
    Ok(())
}
