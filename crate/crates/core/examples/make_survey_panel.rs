//! Writes the synthetic three-round survey panel as CSV.
//!
//! cargo run -p ctsnm-core --example make_survey_panel -- data/diarrhea_synthetic.csv

use ctsnm_core::panel::write_panel_csv;
use ctsnm_core::synthetic::survey_panel;

fn main() -> ctsnm_core::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "diarrhea_synthetic.csv".into());
    let n = std::env::args().nth(2).map_or(Ok(600), |s| s.parse()).expect("subject count");
    write_panel_csv(&survey_panel(n, 20_070_301), &out)
}
