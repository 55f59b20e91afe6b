use super::*;

#[test]
fn wada_table_text_round_trip() {
    let t = WadaTable::builtin();
    assert!(t.is_monotone());
    assert_eq!(t.range(), (TABLE_MIN_DB as f64, TABLE_MAX_DB as f64));
    let back = WadaTable::parse(&t.to_text()).unwrap();
    assert_eq!(back.rows().count(), 121);
    for ((g0, d0), (g1, d1)) in t.rows().zip(back.rows()) {
        assert!((g0 - g1).abs() < 1e-11 && d0 == d1);
    }
}

#[test]
fn wada_lookup_interpolates_and_clamps() {
    let t = WadaTable::parse("0.1 -20\n0.2 0\n0.4 100\n").unwrap();
    assert_eq!(t.lookup(0.0), -20.0);
    assert!((t.lookup(0.15) + 10.0).abs() < 1e-9);
    assert!((t.lookup(0.3) - 50.0).abs() < 1e-9);
    assert_eq!(t.lookup(9.0), 100.0);
}

#[test]
fn wada_table_rejects_bad_text() {
    assert!(WadaTable::parse("0.1 1\n0.05 2\n").is_err());
    assert!(WadaTable::parse("0.1\n").is_err());
    assert!(WadaTable::parse("# only a comment\n").is_err());
}

#[test]
fn pixels_are_flipped_vertically() {
    let g = Grid::from_fn(4, 3, |r, _| if r == 0 { 1.0 } else { 0.0 });
    let px = spectrogram_pixels(&g).unwrap();
    assert_eq!(&px[9..], &[255, 255, 255]);
    assert!(px[..9].iter().all(|&p| p == 0));
}

#[test]
fn report_statistics() {
    let r = SnrReport {
        kind: PoolKind::Original,
        source: StyleLabel::A,
        method: SnrMethod::Stnr,
        estimates: vec![1.0, 2.0, 3.0],
    };
    assert_eq!(r.mean(), 2.0);
    assert_eq!(r.std(), 1.0);
}
