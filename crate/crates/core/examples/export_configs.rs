//! Regenerate the shipped configuration files under `configs/` from the
//! built-in scenarios. Pass a directory to write elsewhere.

use std::fs;
use std::path::PathBuf;

use droplab::bioassay::{ClassifierConfig, FluorescenceModel};
use droplab::cli::{AutofocusDemoConfig, RunConfig, SearchFile};
use droplab::optimizer::EvalMode;
use droplab::scenarios::{cocktail_scenario, cocktail_search_config, drug_panel, panel_strains, AssayOptions, PANEL_NOISE_SIGMA};

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap() + "\n"
}

fn main() {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
    });
    let panel_dir = root.join("panel");
    fs::create_dir_all(&panel_dir).unwrap();
    let assay = drug_panel(&AssayOptions::default());
    fs::write(panel_dir.join("plate.json"), pretty(&assay.plate.layout())).unwrap();
    fs::write(panel_dir.join("strains.json"), pretty(&panel_strains())).unwrap();
    fs::write(panel_dir.join("assay.dprot"), &assay.protocol).unwrap();
    let run = RunConfig {
        plate: "plate.json".into(),
        strains: "strains.json".into(),
        protocol: Some("assay.dprot".into()),
        fluorescence: FluorescenceModel {
            noise_sigma: PANEL_NOISE_SIGMA,
            ..Default::default()
        },
        classifier: ClassifierConfig::default(),
        seed: 7,
    };
    fs::write(panel_dir.join("run.json"), pretty(&run)).unwrap();

    let search = SearchFile {
        scenario: cocktail_scenario(EvalMode::Pipeline),
        search: cocktail_search_config(0),
    };
    fs::create_dir_all(root.join("cocktail")).unwrap();
    fs::write(root.join("cocktail/search.json"), pretty(&search)).unwrap();
    fs::write(root.join("autofocus.json"), pretty(&AutofocusDemoConfig::default())).unwrap();
    println!("wrote configs under {}", root.display());
}
