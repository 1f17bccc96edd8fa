//! POI records, their rendered semantic descriptions, and per-POI text
//! embedding vectors.
//!
//! Text vectors normally arrive precomputed in a TEV1 file (the language
//! model lives outside this crate); [`fallback_embed`] is a deterministic
//! hash-based stand-in so the full pipeline can run hermetically.
//!
//! POI CSV: UTF-8, header `id,x,y,name,cat1,cat2`, RFC 4180 quoting.
//! TEV1, little-endian: magic `TEV1`, version u32 = 1, count u32, dim u32,
//! then `count` records of (poi_id u64, dim x f32).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

pub const TEXT_MAGIC: &[u8; 4] = b"TEV1";
pub const TEXT_VERSION: u32 = 1;
/// Default text embedding width used by the fallback embedder.
pub const DEFAULT_TEXT_DIM: usize = 384;

/// One point of interest: location plus a name and two-level category.
#[derive(Debug, Clone, PartialEq)]
pub struct PoiRecord {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub name: String,
    pub category_l1: String,
    pub category_l2: String,
}

/// Precomputed text embedding for one POI.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub poi_id: u64,
    pub vector: Vec<f32>,
}

/// Renders the semantic description
/// `"A place of {category_l2}, a type of {category_l1}, named {name}."`.
pub fn render_description(record: &PoiRecord) -> String {
    format!(
        "A place of {}, a type of {}, named {}.",
        record.category_l2, record.category_l1, record.name
    )
}

/// Loads POIs from CSV, rejecting invalid rows with their line numbers.
pub fn load_pois(path: &Path) -> Result<Vec<PoiRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));

    let headers = reader.headers().map_err(|e| csv_err(path, &e))?.clone();
    let expected = ["id", "x", "y", "name", "cat1", "cat2"];
    for col in expected {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                reason: format!("missing column `{col}` (header: {headers:?})"),
            });
        }
    }
    let idx: Vec<usize> = expected
        .iter()
        .map(|col| headers.iter().position(|h| h == *col).unwrap())
        .collect();

    let mut pois = Vec::new();
    let mut seen: HashMap<u64, u64> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, &e))?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |i: usize| record.get(idx[i]).unwrap_or("");

        let id: u64 = get(0).trim().parse().map_err(|_| Error::Csv {
            path: path.to_path_buf(),
            reason: format!("line {line}: unparseable id `{}`", get(0)),
        })?;
        if let Some(first) = seen.insert(id, line) {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                reason: format!("duplicate id {id} on lines {first} and {line}"),
            });
        }
        let parse_coord = |raw: &str, which: &str| -> Result<f64> {
            let v: f64 = raw.trim().parse().map_err(|_| Error::Csv {
                path: path.to_path_buf(),
                reason: format!("line {line}: unparseable {which} coordinate `{raw}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    reason: format!("line {line}: non-finite {which} coordinate"),
                });
            }
            Ok(v)
        };
        let x = parse_coord(get(1), "x")?;
        let y = parse_coord(get(2), "y")?;

        let text_field = |i: usize, which: &str| -> Result<String> {
            let v = get(i).trim();
            if v.is_empty() {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    reason: format!("line {line}: empty {which}"),
                });
            }
            Ok(v.to_string())
        };
        pois.push(PoiRecord {
            id,
            x,
            y,
            name: text_field(3, "name")?,
            category_l1: text_field(4, "cat1")?,
            category_l2: text_field(5, "cat2")?,
        });
    }
    Ok(pois)
}

/// Writes POIs as CSV; `load_pois` of the output round-trips field-for-field.
pub fn write_pois(pois: &[PoiRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    writer
        .write_record(["id", "x", "y", "name", "cat1", "cat2"])
        .map_err(|e| csv_err(path, &e))?;
    for p in pois {
        writer
            .write_record([
                p.id.to_string(),
                p.x.to_string(),
                p.y.to_string(),
                p.name.clone(),
                p.category_l1.clone(),
                p.category_l2.clone(),
            ])
            .map_err(|e| csv_err(path, &e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: &dyn std::fmt::Display) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Loads a TEV1 file and aligns one vector to each POI in `pois` order.
/// Vectors for unknown ids are ignored with a logged count.
pub fn load_text_embeddings(path: &Path, pois: &[PoiRecord]) -> Result<Vec<TextEmbedding>> {
    let all = read_text_embeddings(path)?;
    let mut by_id: HashMap<u64, TextEmbedding> = HashMap::with_capacity(all.len());
    for t in all {
        let id = t.poi_id;
        if by_id.insert(id, t).is_some() {
            return Err(Error::TextEmbedding(format!(
                "duplicate vector for poi id {id} in {}",
                path.display()
            )));
        }
    }
    let mut aligned = Vec::with_capacity(pois.len());
    for p in pois {
        let t = by_id.remove(&p.id).ok_or_else(|| {
            Error::TextEmbedding(format!(
                "no vector for poi id {} in {}",
                p.id,
                path.display()
            ))
        })?;
        aligned.push(t);
    }
    if !by_id.is_empty() {
        log::warn!(
            "{}: ignoring {} vectors without matching POIs",
            path.display(),
            by_id.len()
        );
    }
    Ok(aligned)
}

/// Reads every record of a TEV1 file, validating finiteness.
pub fn read_text_embeddings(path: &Path) -> Result<Vec<TextEmbedding>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_bytes(&mut r, &mut magic, path)?;
    if &magic != TEXT_MAGIC {
        return Err(Error::BadMagic {
            format: "TEV1",
            path: path.to_path_buf(),
        });
    }
    let version = read_u32(&mut r, path)?;
    if version != TEXT_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "TEV1",
            version,
            path: path.to_path_buf(),
        });
    }
    let count = read_u32(&mut r, path)? as usize;
    let dim = read_u32(&mut r, path)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut id_bytes = [0u8; 8];
        read_bytes(&mut r, &mut id_bytes, path)?;
        let poi_id = u64::from_le_bytes(id_bytes);
        let mut payload = vec![0u8; 4 * dim];
        read_bytes(&mut r, &mut payload, path)?;
        let vector: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(bad) = vector.iter().find(|v| !v.is_finite()) {
            return Err(Error::TextEmbedding(format!(
                "non-finite entry {bad} in vector for poi id {poi_id}"
            )));
        }
        out.push(TextEmbedding { poi_id, vector });
    }
    Ok(out)
}

/// Writes a TEV1 file. All vectors must share one dimension.
pub fn write_text_embeddings(embeddings: &[TextEmbedding], path: &Path) -> Result<()> {
    let dim = embeddings.first().map_or(0, |t| t.vector.len());
    for t in embeddings {
        if t.vector.len() != dim {
            return Err(Error::TextEmbedding(format!(
                "vector for poi id {} has dimension {}, expected {dim}",
                t.poi_id,
                t.vector.len()
            )));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    emit(TEXT_MAGIC)?;
    emit(&TEXT_VERSION.to_le_bytes())?;
    emit(&(embeddings.len() as u32).to_le_bytes())?;
    emit(&(dim as u32).to_le_bytes())?;
    for t in embeddings {
        emit(&t.poi_id.to_le_bytes())?;
        for v in &t.vector {
            emit(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Deterministic hash-based text embedding: lowercase tokens split on
/// non-alphanumeric characters, one seeded normal vector per token, summed
/// and L2-normalized. Identical strings give bit-identical vectors.
pub fn fallback_embed(description: &str, d_t: usize) -> Result<Vec<f32>> {
    if d_t < 8 {
        return Err(Error::TextEmbedding(format!(
            "embedding dimension must be >= 8, got {d_t}"
        )));
    }
    let mut acc = vec![0.0f64; d_t];
    let mut tokens = 0usize;
    for token in description
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let token = token.to_lowercase();
        let mut stream = rng::stream(rng::stable_hash64(&token), "fallback-token");
        for a in acc.iter_mut() {
            let draw: f64 = stream.sample(StandardNormal);
            *a += draw;
        }
        tokens += 1;
    }
    if tokens == 0 {
        return Err(Error::TextEmbedding(format!(
            "no tokens in description {description:?}"
        )));
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
    Ok(acc.iter().map(|v| (v * inv) as f32).collect())
}

fn read_bytes(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::TruncatedPayload {
                path: path.to_path_buf(),
                expected: buf.len() as u64,
                got: 0,
            }
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_bytes(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poi(id: u64, name: &str, l1: &str, l2: &str) -> PoiRecord {
        PoiRecord {
            id,
            x: 1000.0 + id as f64,
            y: -500.0,
            name: name.into(),
            category_l1: l1.into(),
            category_l2: l2.into(),
        }
    }

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| f64::from(*x) * f64::from(*y))
            .sum()
    }

    #[test]
    fn renders_the_template_verbatim() {
        let p = poi(1, "Starbucks", "food and drink", "coffee shop");
        assert_eq!(
            render_description(&p),
            "A place of coffee shop, a type of food and drink, named Starbucks."
        );
        let p = poi(2, "X", "A", "B");
        assert_eq!(render_description(&p), "A place of B, a type of A, named X.");
    }

    #[test]
    fn commas_pass_through_unescaped() {
        let p = poi(3, "Fish, Chips & More", "food", "takeaway");
        let s = render_description(&p);
        assert!(s.contains("named Fish, Chips & More."));
    }

    #[test]
    fn render_is_injective_on_distinct_triples() {
        let triples = [
            ("Alpha", "retail", "bookshop"),
            ("Beta", "retail", "bookshop"),
            ("Alpha", "education", "bookshop"),
            ("Alpha", "retail", "newsagent"),
        ];
        let mut seen = std::collections::HashSet::new();
        for (i, (n, l1, l2)) in triples.iter().enumerate() {
            let s = render_description(&poi(i as u64, n, l1, l2));
            assert!(seen.insert(s), "collision for triple {i}");
        }
    }

    #[test]
    fn csv_roundtrip_preserves_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pois.csv");
        let pois = vec![
            poi(10, "Corner Cafe", "food and drink", "cafe"),
            poi(11, "St. Mary's, Annex", "education", "primary school"),
            poi(12, "\"Quoted\" Books", "retail", "bookshop"),
        ];
        write_pois(&pois, &path).unwrap();
        let back = load_pois(&path).unwrap();
        assert_eq!(back, pois);
    }

    #[test]
    fn wellformed_file_parses_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pois.csv");
        std::fs::write(
            &path,
            "id,x,y,name,cat1,cat2\n1,10.0,20.0,A,c1,c2\n2,11.0,21.0,B,c1,c2\n3,12.0,22.0,C,c1,c2\n",
        )
        .unwrap();
        let pois = load_pois(&path).unwrap();
        assert_eq!(pois.len(), 3);
        assert_eq!(pois[0].id, 1);
        assert_eq!(pois[2].name, "C");
    }

    #[test]
    fn duplicate_ids_name_both_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pois.csv");
        std::fs::write(
            &path,
            "id,x,y,name,cat1,cat2\n7,1,2,A,c,d\n8,1,2,B,c,d\n7,1,2,C,c,d\n",
        )
        .unwrap();
        match load_pois(&path) {
            Err(Error::Csv { reason, .. }) => {
                assert!(reason.contains("lines 2 and 4"), "{reason}");
            }
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn quoted_name_with_comma_parses_as_one_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pois.csv");
        std::fs::write(
            &path,
            "id,x,y,name,cat1,cat2\n1,5.5,6.5,\"Fish, Chips\",food,takeaway\n",
        )
        .unwrap();
        let pois = load_pois(&path).unwrap();
        assert_eq!(pois[0].name, "Fish, Chips");
    }

    #[test]
    fn missing_column_and_bad_coordinate_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pois.csv");
        std::fs::write(&path, "id,x,name,cat1,cat2\n1,5,A,c,d\n").unwrap();
        match load_pois(&path) {
            Err(Error::Csv { reason, .. }) => assert!(reason.contains("missing column `y`")),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "id,x,y,name,cat1,cat2\n1,abc,2,A,c,d\n").unwrap();
        match load_pois(&path) {
            Err(Error::Csv { reason, .. }) => assert!(reason.contains("line 2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn text_embedding_roundtrip_and_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text.tev");
        let embeddings = vec![
            TextEmbedding {
                poi_id: 2,
                vector: vec![0.5, -1.0, 2.0],
            },
            TextEmbedding {
                poi_id: 1,
                vector: vec![1.0, 0.0, 0.0],
            },
            TextEmbedding {
                poi_id: 99,
                vector: vec![9.0, 9.0, 9.0],
            },
        ];
        write_text_embeddings(&embeddings, &path).unwrap();
        let pois = vec![poi(1, "A", "c", "d"), poi(2, "B", "c", "d")];
        let aligned = load_text_embeddings(&path, &pois).unwrap();
        assert_eq!(aligned[0].poi_id, 1);
        assert_eq!(aligned[1].poi_id, 2);
        assert_eq!(aligned[1].vector, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn missing_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text.tev");
        write_text_embeddings(
            &[TextEmbedding {
                poi_id: 1,
                vector: vec![1.0, 2.0],
            }],
            &path,
        )
        .unwrap();
        let pois = vec![poi(1, "A", "c", "d"), poi(5, "B", "c", "d")];
        match load_text_embeddings(&path, &pois) {
            Err(Error::TextEmbedding(msg)) => assert!(msg.contains("id 5")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infinite_entry_is_rejected_with_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text.tev");
        // Write bytes by hand since write_text_embeddings would pass +Inf through.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"TEV1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&42u64.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match read_text_embeddings(&path) {
            Err(Error::TextEmbedding(msg)) => assert!(msg.contains("42"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fallback_embed_is_deterministic_and_unit_norm() {
        let a = fallback_embed("A place of cafe, a type of food, named Rosie's.", 64).unwrap();
        let b = fallback_embed("A place of cafe, a type of food, named Rosie's.", 64).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a
            .iter()
            .map(|v| f64::from(*v) * f64::from(*v))
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn one_token_difference_breaks_exact_similarity() {
        let a = fallback_embed("coffee shop riverside", 64).unwrap();
        let b = fallback_embed("coffee shop hillside", 64).unwrap();
        assert!(cosine(&a, &b) < 1.0 - 1e-9);
    }

    #[test]
    fn empty_description_is_an_error() {
        assert!(fallback_embed("  ... ", 64).is_err());
    }

    #[test]
    fn shared_categories_embed_closer_on_average() {
        // Monte-Carlo check with the fallback embedder itself as oracle:
        // POIs sharing both category levels but differing in name should be
        // more similar on average than POIs sharing no tokens at all.
        let mut same_cat = 0.0f64;
        let mut diff_cat = 0.0f64;
        let n = 100;
        for i in 0..n {
            let a = fallback_embed(
                &format!("A place of coffee shop, a type of food and drink, named Brew{i}."),
                64,
            )
            .unwrap();
            let b = fallback_embed(
                &format!("A place of coffee shop, a type of food and drink, named Roast{i}."),
                64,
            )
            .unwrap();
            let c = fallback_embed(
                &format!("Somewhere categorized as warehouse within logistics called Depot{i}"),
                64,
            )
            .unwrap();
            same_cat += cosine(&a, &b);
            diff_cat += cosine(&a, &c);
        }
        assert!(
            same_cat / n as f64 > diff_cat / n as f64,
            "shared-category mean cosine {} should exceed disjoint mean {}",
            same_cat / n as f64,
            diff_cat / n as f64
        );
    }
}
