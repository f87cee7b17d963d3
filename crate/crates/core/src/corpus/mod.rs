//! Corpus ingestion: PAN12 chat logs, delimited abusive-comment tables,
//! the processed `label<TAB>text` dataset format, seeded splitting and
//! dataset statistics.
//!
//! Processed dataset files hold one example per line: the decimal label,
//! a tab, then the text with `\` → `\\`, newline → `\n`, tab → `\t` and
//! carriage return → `\r`.

mod dataset;
mod pan12;
pub mod synthetic;
mod tabular;

pub use dataset::{
    dataset_from_str, dataset_stats, dataset_to_string, load_dataset, save_dataset, split_dataset,
    DatasetStats, LabeledDataset, LabeledExample, SplitInfo, SplitPart,
};
pub use pan12::{
    filter_conversations, label_conversations, load_predator_ids, parse_pan12_str, parse_pan12_xml,
    Conversation, FilterStats, Message, MIN_MESSAGES, REQUIRED_AUTHORS,
};
pub use tabular::{load_tabular, read_tabular, TabularFormat};
