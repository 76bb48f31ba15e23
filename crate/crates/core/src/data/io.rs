//! CSV formats.
//!
//! - users: `user_id,t0,...,t{d-1}[,tag]`
//! - items: `item_id,tag,f0,...,f{d-1}`
//! - triplets: `user_id,item_i,item_j,label`
//!
//! UTF-8, `.` as decimal separator. Line numbers in errors are 1-based and
//! count the header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use super::{FeatureStore, ItemRecord, TripletExample, UserRecord};
use crate::error::{Error, Result};
use crate::model::PairLabel;

pub const USERS_FILE: &str = "users.csv";
pub const ITEMS_FILE: &str = "items.csv";

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(r)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn line_of(rec: &StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_field<T: std::str::FromStr>(rec: &StringRecord, idx: usize, name: &str) -> Result<T> {
    let raw = rec.get(idx).unwrap_or("");
    raw.parse().map_err(|_| Error::Parse {
        line: line_of(rec),
        message: format!("column `{name}`: cannot parse {raw:?}"),
    })
}

fn parse_value(rec: &StringRecord, idx: usize, name: impl Fn() -> String) -> Result<f64> {
    let raw = rec.get(idx).unwrap_or("");
    let v: f64 = raw.parse().map_err(|_| Error::Parse {
        line: line_of(rec),
        message: format!("column `{}`: cannot parse {raw:?}", name()),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFiniteInput {
            line: line_of(rec),
            column: name(),
        });
    }
    Ok(v)
}

fn expect_sequence(headers: &StringRecord, start: usize, count: usize, prefix: char) -> Result<()> {
    for k in 0..count {
        let want = format!("{prefix}{k}");
        let got = headers.get(start + k).unwrap_or("");
        if got != want {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "header column {}: expected `{want}`, found `{got}`",
                    start + k + 1
                ),
            });
        }
    }
    Ok(())
}

fn header_error(message: impl Into<String>) -> Error {
    Error::Parse {
        line: 1,
        message: message.into(),
    }
}

/// Parses a users file. Without a `tag` column the dominant tag is the
/// argmax of the topic vector.
pub fn read_users<R: Read>(r: R) -> Result<Vec<UserRecord>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.get(0) != Some("user_id") {
        return Err(header_error("first column must be `user_id`"));
    }
    let has_tag = headers.len() > 1 && headers.get(headers.len() - 1) == Some("tag");
    let dim = headers.len() - 1 - usize::from(has_tag);
    if dim == 0 {
        return Err(header_error("no topic columns"));
    }
    expect_sequence(&headers, 1, dim, 't')?;

    let mut users = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() != headers.len() {
            return Err(Error::Dimension {
                line: line_of(&rec),
                expected: dim,
                found: rec.len().saturating_sub(headers.len() - dim),
            });
        }
        let id = parse_field(&rec, 0, "user_id")?;
        let topic = (0..dim)
            .map(|k| parse_value(&rec, 1 + k, || format!("t{k}")))
            .collect::<Result<Vec<f64>>>()?;
        users.push(if has_tag {
            UserRecord::with_tag(id, topic, parse_field(&rec, dim + 1, "tag")?)
        } else {
            UserRecord::new(id, topic)
        });
    }
    Ok(users)
}

pub fn read_items<R: Read>(r: R) -> Result<Vec<ItemRecord>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.get(0) != Some("item_id") || headers.get(1) != Some("tag") {
        return Err(header_error("first columns must be `item_id,tag`"));
    }
    let dim = headers.len() - 2;
    if dim == 0 {
        return Err(header_error("no feature columns"));
    }
    expect_sequence(&headers, 2, dim, 'f')?;

    let mut items = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() != headers.len() {
            return Err(Error::Dimension {
                line: line_of(&rec),
                expected: dim,
                found: rec.len().saturating_sub(2),
            });
        }
        let id = parse_field(&rec, 0, "item_id")?;
        let tag = parse_field(&rec, 1, "tag")?;
        let features = (0..dim)
            .map(|k| parse_value(&rec, 2 + k, || format!("f{k}")))
            .collect::<Result<Vec<f64>>>()?;
        items.push(ItemRecord { id, tag, features });
    }
    Ok(items)
}

pub fn read_triplets<R: Read>(r: R) -> Result<Vec<TripletExample>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let want = ["user_id", "item_i", "item_j", "label"];
    if headers.len() != want.len() || headers.iter().zip(want).any(|(a, b)| a != b) {
        return Err(header_error("header must be `user_id,item_i,item_j,label`"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() != want.len() {
            return Err(Error::Parse {
                line: line_of(&rec),
                message: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        let raw_label: u8 = parse_field(&rec, 3, "label")?;
        let label = PairLabel::from_value(raw_label).ok_or_else(|| Error::Parse {
            line: line_of(&rec),
            message: format!("label must be 0 or 1, found {raw_label}"),
        })?;
        out.push(TripletExample {
            user: parse_field(&rec, 0, "user_id")?,
            item_i: parse_field(&rec, 1, "item_i")?,
            item_j: parse_field(&rec, 2, "item_j")?,
            label,
        });
    }
    Ok(out)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    WriterBuilder::new().from_writer(w)
}

fn write_error(e: impl std::fmt::Display) -> Error {
    Error::Data(format!("write failed: {e}"))
}

/// Writes a users file; the `tag` column is always emitted so explicit tags
/// survive a round trip.
pub fn write_users<W: Write>(w: W, users: &[UserRecord]) -> Result<()> {
    let dim = users.first().map_or(0, |u| u.topic_vector.len());
    let mut wtr = writer(w);
    let mut header = vec!["user_id".to_string()];
    header.extend((0..dim).map(|k| format!("t{k}")));
    header.push("tag".into());
    wtr.write_record(&header).map_err(write_error)?;
    for u in users {
        let mut row = vec![u.id.to_string()];
        row.extend(u.topic_vector.iter().map(|v| v.to_string()));
        row.push(u.dominant_tag.to_string());
        wtr.write_record(&row).map_err(write_error)?;
    }
    wtr.flush().map_err(write_error)
}

pub fn write_items<W: Write>(w: W, items: &[ItemRecord]) -> Result<()> {
    let dim = items.first().map_or(0, |i| i.features.len());
    let mut wtr = writer(w);
    let mut header = vec!["item_id".to_string(), "tag".to_string()];
    header.extend((0..dim).map(|k| format!("f{k}")));
    wtr.write_record(&header).map_err(write_error)?;
    for it in items {
        let mut row = vec![it.id.to_string(), it.tag.to_string()];
        row.extend(it.features.iter().map(|v| v.to_string()));
        wtr.write_record(&row).map_err(write_error)?;
    }
    wtr.flush().map_err(write_error)
}

pub fn write_triplets<W: Write>(w: W, triplets: &[TripletExample]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["user_id", "item_i", "item_j", "label"])
        .map_err(write_error)?;
    for t in triplets {
        wtr.write_record([
            t.user.to_string(),
            t.item_i.to_string(),
            t.item_j.to_string(),
            t.label.value().to_string(),
        ])
        .map_err(write_error)?;
    }
    wtr.flush().map_err(write_error)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Loads and validates a users file and an items file.
pub fn load_corpus(
    users_path: impl AsRef<Path>,
    items_path: impl AsRef<Path>,
) -> Result<FeatureStore> {
    let (up, ip) = (users_path.as_ref(), items_path.as_ref());
    let users = with_path(up, read_users(open(up)?))?;
    let items = with_path(ip, read_items(open(ip)?))?;
    let store = FeatureStore::new(users, items)?;
    let (nu, ni) = store.counts();
    log::info!(
        "loaded {nu} users ({} dims), {ni} items ({} dims)",
        store.user_dim(),
        store.item_dim()
    );
    Ok(store)
}

/// Loads `users.csv` and `items.csv` from a directory.
pub fn load_corpus_dir(dir: impl AsRef<Path>) -> Result<FeatureStore> {
    let dir = dir.as_ref();
    load_corpus(dir.join(USERS_FILE), dir.join(ITEMS_FILE))
}

pub fn save_corpus_dir(store: &FeatureStore, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_users(create(&dir.join(USERS_FILE))?, store.users())?;
    write_items(create(&dir.join(ITEMS_FILE))?, store.items())
}

pub fn load_triplets(path: impl AsRef<Path>) -> Result<Vec<TripletExample>> {
    let path = path.as_ref();
    with_path(path, read_triplets(open(path)?))
}

pub fn save_triplets(triplets: &[TripletExample], path: impl AsRef<Path>) -> Result<()> {
    write_triplets(create(path.as_ref())?, triplets)
}
