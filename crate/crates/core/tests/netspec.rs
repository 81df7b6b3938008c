use sparseflow::netspec::{firenet, from_bytes, load_network, save_network, to_bytes, FireNetShape, NetworkKind};

#[test]
fn firenet_parameter_count_by_hand() {
    // 2->32 3x3 input conv, eight 32x32 3x3 kernels (two recurrent), a 1x1
    // 32->2 head with bias, and two 32-vectors per hidden stage: bias and
    // threshold for ANN, threshold and leak for SNN.
    let want = 3 * 3 * 2 * 32 + 8 * 3 * 3 * 32 * 32 + 32 * 2 + 2 + 7 * 2 * 32;
    for kind in [NetworkKind::Ann, NetworkKind::Snn] {
        let net = firenet(FireNetShape::full(kind), 0).unwrap();
        assert_eq!(net.parameter_count(), want, "{kind:?}");
        assert!(net.is_firenet());
    }
}

#[test]
fn weight_file_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [NetworkKind::Ann, NetworkKind::Snn] {
        let net = firenet(
            FireNetShape {
                kind,
                channels: 8,
                height: 12,
                width: 16,
            },
            9,
        )
        .unwrap();
        let p = dir.path().join("n.sfnet");
        save_network(&net, &p).unwrap();
        assert_eq!(load_network(&p).unwrap(), net);
        let mut bytes = to_bytes(&net);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(from_bytes(&bytes).is_err());
        assert!(from_bytes(&to_bytes(&net)[..20]).is_err());
    }
}
