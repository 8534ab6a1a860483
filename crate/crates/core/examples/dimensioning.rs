//! Feature and parameter bookkeeping for the configurations in `configs/`:
//! input rows, head rows and MLP parameter counts, plus how the count grows
//! with width and depth.

use dpc::blocks::mlp_param_count;
use dpc::harness::{build_plant, RunConfig};

fn main() -> dpc::Result<()> {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["desk.json", "six_zone.json"] {
        let cfg = RunConfig::load(&root.join(name))?;
        let plant = build_plant(&cfg)?;
        let n_u = plant.params().n_controls();
        let layout = cfg.policy.layout(plant.zones(), 1, cfg.ssm.past);
        println!(
            "{name}: {} zones, past {}, horizon {}",
            plant.zones(),
            cfg.ssm.past,
            cfg.policy.horizon
        );
        for seg in &layout.segments {
            println!("  {:<14} {:>4} rows", seg.name, seg.rows);
        }
        let mut sizes = vec![layout.rows()];
        sizes.extend(&cfg.policy.hidden);
        sizes.push(n_u * cfg.policy.horizon);
        println!(
            "  features {} -> head {} ({} controls x {} steps), chain {:?}: {} parameters",
            layout.rows(),
            n_u * cfg.policy.horizon,
            n_u,
            cfg.policy.horizon,
            sizes,
            mlp_param_count(&sizes)
        );
    }

    println!("\nparameters of a 416 -> h x depth -> 224 chain:");
    print!("{:>6}", "h");
    for depth in 1..=4 {
        print!("{:>10}", format!("depth {depth}"));
    }
    println!();
    for h in [64, 100, 166, 256, 300] {
        print!("{h:>6}");
        for depth in 1..=4 {
            let mut sizes = vec![416];
            sizes.extend(std::iter::repeat_n(h, depth));
            sizes.push(224);
            print!("{:>10}", mlp_param_count(&sizes));
        }
        println!();
    }
    Ok(())
}
