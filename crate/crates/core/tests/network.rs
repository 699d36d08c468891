use qsiam_core::siamnet::{canonical_network, gen_random_weights, QuantizedNetwork};
use qsiam_core::synthetic::TranslatingSquare;
use qsiam_core::tracker::{crop_resize, crop_square, patch_to_qtensor, BBox};

#[test]
fn both_branches_share_one_set_of_weights() {
    let spec = canonical_network();
    let net = QuantizedNetwork::new(&spec, &gen_random_weights(&spec, 4)).unwrap();
    let frame = TranslatingSquare::default().frame(0);
    let bbox = BBox::from_top_left(60.0, 100.0, 40.0, 40.0).unwrap();

    // exemplar through the tracker's crop path, and the same window cut
    // independently as a plain square crop
    let ex_patch = crop_resize(&frame, &bbox, 0.5, 110, 110).unwrap();
    let side = qsiam_core::tracker::context_side(&bbox, 0.5);
    let roi_cut = crop_square(&frame, bbox.cx, bbox.cy, side, 110, frame.channel_mean()).unwrap();
    let a = net.forward(&patch_to_qtensor(&ex_patch, net.input_scale()).unwrap()).unwrap();
    let b = net.forward(&patch_to_qtensor(&roi_cut, net.input_scale()).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.dims(), [128, 13, 13]);
}

#[test]
fn exemplar_shape_chain() {
    let spec = canonical_network();
    let net = QuantizedNetwork::new(&spec, &gen_random_weights(&spec, 9)).unwrap();
    let frame = TranslatingSquare::default().frame(3);
    let bbox = BBox::from_top_left(66.0, 100.0, 40.0, 40.0).unwrap();
    let patch = crop_resize(&frame, &bbox, 0.5, 110, 110).unwrap();
    let (out, trace) = net.forward_traced(&patch_to_qtensor(&patch, net.input_scale()).unwrap()).unwrap();
    assert_eq!(trace, [110, 110, 55, 55, 27, 27, 13, 13, 13, 13]);
    assert_eq!(out.dims(), [128, 13, 13]);
}
