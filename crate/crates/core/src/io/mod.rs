//! Dataset schema, CSV ingestion and the share-construction steps of the
//! empirical pipeline.

mod csv_io;
mod dataset;
mod shares;

pub use csv_io::{format_f64, load_csv, read_csv, write_csv, write_csv_to, ColumnManifest, PriceColumn};
pub use dataset::{MarketDataset, MarketGroup, Observation, SHARE_SUM_TOLERANCE};
pub use shares::{construct_shares, fill_missing_prices, FillReport, MarketSizeRule, QuantityRecord, ShareConstruction};

#[cfg(test)]
pub(crate) use dataset::fixtures as dataset_fixtures;
