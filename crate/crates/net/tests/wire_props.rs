use proptest::prelude::*;
use serde_json::{json, Map, Value};
use wsdo_net::wire::{decode_message, encode_message, FrameDecoder, MessageType, WireMessage};

fn kind() -> impl Strategy<Value = MessageType> {
    prop_oneof![
        Just(MessageType::Hello),
        Just(MessageType::Solve),
        Just(MessageType::Result),
        Just(MessageType::Ping),
        Just(MessageType::Pong),
        Just(MessageType::Error),
        Just(MessageType::Shutdown),
    ]
}

fn leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(|i| json!(i)),
        any::<u64>().prop_map(|u| json!(u)),
        (-1e300f64..1e300).prop_map(|f| json!(f)),
        any::<f64>().prop_filter("finite", |f| f.is_finite()).prop_map(|f| json!(f)),
        "\\PC{0,24}".prop_map(Value::String),
    ]
}

fn payload() -> impl Strategy<Value = Value> {
    leaf().prop_recursive(3, 48, 8, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..8).prop_map(Value::Array),
            prop::collection::btree_map("[a-z_]{1,8}", inner, 0..6).prop_map(|m| Value::Object(m.into_iter().collect::<Map<_, _>>())),
        ]
    })
}

fn message() -> impl Strategy<Value = WireMessage> {
    (kind(), any::<u64>(), payload()).prop_map(|(k, id, p)| WireMessage::new(k, id, p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn encode_decode_round_trip(m in message()) {
        let bytes = encode_message(&m).unwrap();
        let (back, used) = decode_message(&bytes).unwrap().unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, m);
    }

    #[test]
    fn truncation_never_yields_a_message(m in message(), cut in any::<prop::sample::Index>()) {
        let bytes = encode_message(&m).unwrap();
        let n = cut.index(bytes.len());
        prop_assert!(decode_message(&bytes[..n]).unwrap().is_none());
        let mut dec = FrameDecoder::new();
        dec.push(&bytes[..n]);
        prop_assert!(dec.next_message().unwrap().is_none());
        dec.push(&bytes[n..]);
        prop_assert_eq!(dec.next_message().unwrap(), Some(m));
        prop_assert_eq!(dec.buffered(), 0);
    }

    #[test]
    fn stream_split_anywhere_decodes_in_order(ms in prop::collection::vec(message(), 1..6), sizes in prop::collection::vec(1usize..64, 1..40)) {
        let stream: Vec<u8> = ms.iter().flat_map(|m| encode_message(m).unwrap()).collect();
        let mut dec = FrameDecoder::new();
        let mut out = Vec::new();
        let mut pos = 0;
        let mut k = 0;
        while pos < stream.len() {
            let n = sizes[k % sizes.len()].min(stream.len() - pos);
            dec.push(&stream[pos..pos + n]);
            pos += n;
            k += 1;
            while let Some(m) = dec.next_message().unwrap() {
                out.push(m);
            }
        }
        prop_assert_eq!(out, ms);
    }

    #[test]
    fn floats_survive_exactly(v in prop::collection::vec(any::<f64>().prop_filter("finite", |f| f.is_finite()), 0..64)) {
        let m = WireMessage::new(MessageType::Result, 1, json!({ "values": v }));
        let (back, _) = decode_message(&encode_message(&m).unwrap()).unwrap().unwrap();
        let got: Vec<f64> = serde_json::from_value(back.payload["values"].clone()).unwrap();
        prop_assert_eq!(got.iter().map(|f| f.to_bits()).collect::<Vec<_>>(), v.iter().map(|f| f.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn ping_pong_keeps_the_correlation() {
    let ping = WireMessage::new(MessageType::Ping, 41, json!({}));
    let pong = WireMessage::new(MessageType::Pong, 9, json!({ "in_reply_to": ping.msg_id }));
    let (back, _) = decode_message(&encode_message(&pong).unwrap()).unwrap().unwrap();
    assert_eq!(back.in_reply_to(), Some(41));
}
