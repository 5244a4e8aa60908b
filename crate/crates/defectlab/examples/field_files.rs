//! Field files on disk: inline JSON values or a binary sidecar.
//!
//! A field file carries the grid header (d, m, origin, spacing, counts) and
//! the vertex samples either inline (`values`, bit-exact round trip) or in
//! a little-endian f64 blob next to the JSON (`blob`). This is the format
//! the command-line tool reads and writes.

use std::fs;

use defectlab::cli::{parse_field, FieldFile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;

    // Inline variant: a 2x2-cell grid of unit vectors, m * (counts+1)^d
    // samples in row-major vertex order, components interleaved per vertex.
    let values: Vec<f64> = (0..9).flat_map(|i| {
        let th = 0.3 * i as f64;
        [th.cos(), th.sin()]
    }).collect();
    let file = FieldFile {
        d: 2,
        m: 2,
        origin: vec![0.0, 0.0],
        spacing: vec![0.5, 0.5],
        counts: vec![2, 2],
        target: Some("circle".into()),
        endianness: None,
        values: Some(values.clone()),
        blob: None,
    };
    let inline_path = dir.path().join("inline.json");
    fs::write(&inline_path, serde_json::to_string_pretty(&file)?)?;
    let (u, t) = parse_field(&inline_path)?;
    println!(
        "inline: {}x{} grid, {} components, target {:?}",
        u.layout().counts[0],
        u.layout().counts[1],
        u.components(),
        t.map(|t| t.name())
    );
    assert_eq!(u.value(4), &values[8..10]);

    // Blob variant: same header, samples as raw little-endian doubles.
    let blob_path = dir.path().join("samples.f64");
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&blob_path, bytes)?;
    let file = FieldFile {
        values: None,
        blob: Some("samples.f64".into()),
        endianness: Some("little".into()),
        ..file
    };
    let blob_json = dir.path().join("blob.json");
    fs::write(&blob_json, serde_json::to_string_pretty(&file)?)?;
    let (u2, _) = parse_field(&blob_json)?;
    println!("blob:   identical samples = {}", u2.vertex_values() == u.vertex_values());
    assert_eq!(u2.vertex_values(), u.vertex_values());
    Ok(())
}
