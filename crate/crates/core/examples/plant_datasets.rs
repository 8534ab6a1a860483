//! The RC emulator: time constants, a heating step response, and the two
//! generated datasets with their chronological splits. Pass a directory to
//! also write the CSV files.

use dpc::plant::io::{write_ctrl_csv, write_sysid_csv};
use dpc::plant::{
    generate_ctrl_dataset, generate_sysid_dataset, AmbientConfig, ComfortConfig, ExcitationConfig,
    RcBuildingModel, RcParams, Split,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plant = RcBuildingModel::new(RcParams::default())?;
    let p = plant.params();
    println!(
        "{} zones, {} states, Ts {} s",
        plant.zones(),
        plant.n_states(),
        p.ts
    );
    let tau = plant.time_constants_hours();
    println!(
        "time constants: {:.1} h down to {:.2} h",
        tau.iter().cloned().fold(f64::MIN, f64::max),
        tau.iter().cloned().fold(f64::MAX, f64::min)
    );

    // every zone heated at full flow with the hottest supply, 5 degC outside
    let act = plant.actuators();
    let mut state = plant.uniform_state(18.0);
    println!("step response (zone 1 air):");
    for k in 1..=plant.params().steps_per_day() {
        let out = plant.step(&state, &act.upper, 5.0)?;
        if k % 16 == 0 {
            println!(
                "  {:>5.1} h  {:>6.2} degC  heat {:>7.0} W",
                k as f64 * p.ts / 3600.0,
                out.y[0],
                out.heat[0]
            );
        }
        state = out.state;
    }

    let ambient = AmbientConfig::default();
    let excitation = ExcitationConfig::default();
    let sysid = generate_sysid_dataset(&plant, 30, &excitation, &ambient, 1)?;
    let ctrl = generate_ctrl_dataset(
        &plant,
        30,
        &ComfortConfig::default(),
        &excitation,
        &ambient,
        2,
    )?;
    for (name, splits) in [("identification", sysid.splits), ("control", ctrl.splits)] {
        let s = |split| splits.range(split);
        println!(
            "{name}: train {:?}, dev {:?}, test {:?}",
            s(Split::Train),
            s(Split::Dev),
            s(Split::Test)
        );
    }
    let windows = ctrl.anchors(Split::Train, 16, 16, 1).len();
    println!("{windows} training scenario windows at past 16, horizon 16");
    println!(
        "output variance on test: {:?}",
        sysid.output_variance(Split::Test)
    );

    if let Some(dir) = std::env::args().nth(1) {
        let dir = std::path::PathBuf::from(dir);
        std::fs::create_dir_all(&dir)?;
        write_sysid_csv(&dir.join("sysid.csv"), &sysid)?;
        write_ctrl_csv(&dir.join("ctrl.csv"), &ctrl)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
