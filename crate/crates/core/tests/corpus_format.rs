//! End-to-end checks of the dataset reader against a small on-disk file:
//! parsing shape, span integrity, round-tripping, and rejection of
//! corrupted inputs.

use convqa::corpus::{
    char_span_to_token_span, load_coqa, parse_coqa, serialize_coqa, tokenize_with_offsets,
    write_coqa, AnswerType, Domain,
};
use convqa::Error;

const FIXTURE: &str = include_str!("fixtures/coqa_small.json");

#[test]
fn fixture_parses_with_the_expected_shape() {
    let convs = parse_coqa(FIXTURE).unwrap();
    assert_eq!(convs.len(), 2);

    let cotton = &convs[0];
    assert_eq!(cotton.id, "fix-cotton-001");
    assert_eq!(cotton.domain, Domain::Children);
    assert_eq!(cotton.turns.len(), 6);
    let types: Vec<AnswerType> = cotton.turns.iter().map(|t| t.answer_type).collect();
    assert_eq!(
        types,
        [
            AnswerType::Span,
            AnswerType::Span,
            AnswerType::No,
            AnswerType::Span,
            AnswerType::Span,
            AnswerType::Unknown,
        ]
    );
    // One extra reference set covering every turn.
    assert!(cotton.turns.iter().all(|t| t.additional_refs.len() == 1));
    assert_eq!(cotton.turns[1].gold.text, "in a barn");
    assert_eq!(cotton.turns[1].additional_refs[0].text, "in a barn");
    assert_eq!(cotton.turns[5].gold.span_start, -1);

    let tunnel = &convs[1];
    assert_eq!(tunnel.id, "fix-wiki-002");
    assert_eq!(tunnel.domain, Domain::Wikipedia);
    assert_eq!(tunnel.turns.len(), 3);
    assert_eq!(tunnel.turns[1].answer_type, AnswerType::Yes);
    assert!(tunnel.turns.iter().all(|t| t.additional_refs.is_empty()));
}

#[test]
fn fixture_spans_line_up_with_tokens() {
    let convs = parse_coqa(FIXTURE).unwrap();
    let cotton = &convs[0];
    let tokens = tokenize_with_offsets(&cotton.passage);

    let white = &cotton.turns[0].gold;
    let (s, e) =
        char_span_to_token_span(&tokens, white.span_start as usize, white.span_end as usize)
            .unwrap();
    assert_eq!(s, e);
    assert_eq!(tokens[s].token, "white");

    let barn = &cotton.turns[1].gold;
    let (s, e) =
        char_span_to_token_span(&tokens, barn.span_start as usize, barn.span_end as usize)
            .unwrap();
    let words: Vec<&str> = tokens[s..=e].iter().map(|t| t.token.as_str()).collect();
    assert_eq!(words, ["in", "a", "barn"]);
}

#[test]
fn round_trips_preserve_every_conversation() {
    let convs = parse_coqa(FIXTURE).unwrap();
    let serialized = serialize_coqa(&convs);
    let back = parse_coqa(&serialized).unwrap();
    assert_eq!(back, convs);
    // A second pass through the writer is byte-stable.
    assert_eq!(serialize_coqa(&back), serialized);
}

#[test]
fn files_round_trip_through_disk() {
    let convs = parse_coqa(FIXTURE).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dataset.json");
    write_coqa(&convs, &path).unwrap();
    let back = load_coqa(&path).unwrap();
    assert_eq!(back, convs);
}

#[test]
fn a_single_character_edit_inside_a_span_is_rejected() {
    // Capitalizing one story character under turn 1's answer span makes the
    // extracted text disagree with the recorded span_text.
    let corrupted = FIXTURE.replacen("white kitten named", "White kitten named", 1);
    match parse_coqa(&corrupted) {
        Err(Error::Integrity {
            conversation_id,
            turn_id,
            ..
        }) => {
            assert_eq!(conversation_id, "fix-cotton-001");
            assert_eq!(turn_id, 1);
        }
        other => panic!("expected an integrity error, got {other:?}"),
    }
}

#[test]
fn non_consecutive_turn_ids_are_rejected() {
    let corrupted = FIXTURE.replacen("\"turn_id\": 3", "\"turn_id\": 7", 1);
    assert!(matches!(
        parse_coqa(&corrupted),
        Err(Error::Integrity { .. })
    ));
}

#[test]
fn unrecognized_sources_are_rejected_by_name() {
    let corrupted = FIXTURE.replacen("mctest", "reddit", 1);
    match parse_coqa(&corrupted) {
        Err(Error::UnknownSource {
            conversation_id,
            source_name,
        }) => {
            assert_eq!(conversation_id, "fix-cotton-001");
            assert_eq!(source_name, "reddit");
        }
        other => panic!("expected an unknown-source error, got {other:?}"),
    }
}

#[test]
fn malformed_json_reports_a_byte_offset() {
    let truncated = &FIXTURE[..FIXTURE.len() / 2];
    match parse_coqa(truncated) {
        Err(Error::Format { offset, .. }) => assert!(offset > 0),
        other => panic!("expected a format error, got {other:?}"),
    }
}
