//! File loaders/writers and seeded synthetic scenarios.

pub(crate) mod csv_io;
mod gt1;
mod synthetic;

pub use csv_io::{
    load_generation_csv, load_locations_csv, load_station_csv, parse_generation_csv,
    write_generation_csv, write_locations_csv, write_station_csv, StationTable,
};
pub use gt1::{
    decode_grid_tensor, encode_grid_tensor, load_grid_tensor, write_grid_tensor, GT1_MAGIC,
};
pub use synthetic::{
    generate_grid, generate_panel, generate_stations, generate_synthetic, two_tone_series,
    PanelScenario, SyntheticOutput, SyntheticScenario, TwoToneScenario, WindFieldScenario,
};
