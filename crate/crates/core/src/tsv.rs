//! Tab-separated text helpers shared by every file format the toolkit writes:
//! header row, UTF-8, LF line endings, quoting only when a field needs it.

use std::io::{Read, Write};

pub fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(out)
}

/// Reader that treats lines starting with `#` as comments.
pub fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(input)
}

/// Shortest round-trippable decimal for a float.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}
