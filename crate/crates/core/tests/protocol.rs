//! SVDN client against an in-process loopback server.

use std::io::Cursor;
use std::net::{TcpListener, TcpStream};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stereogen::diffusion::protocol::{
    codes, decode_payload, encode_frame, pack_sequence, read_message, serve, unpack_sequence, ExternalDenoiser,
    Incoming, Message, WireError, WireModel, WireRequest, WireTensor, HEADER_LEN,
};
use stereogen::diffusion::{
    inpaint_sequence, make_schedule, DenoiserEndpoint, IdentityCodec, InpaintOptions, LatentCodec, OracleDenoiser,
    PredictRequest, ScheduleConfig, SequenceOrigin,
};
use stereogen::imaging::{DisocclusionMask, FrameBuffer};
use stereogen::Error;

fn loopback(model: impl WireModel + Send + 'static) -> ExternalDenoiser {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let mut model = model;
    thread::spawn(move || {
        let (s, _) = listener.accept().unwrap();
        let _ = serve(s.try_clone().unwrap(), s, &mut model);
    });
    ExternalDenoiser::from_stream(TcpStream::connect(addr).unwrap())
}

/// Echoes the request tensor as eps and its negation as var.
fn echo(req: &WireRequest) -> Result<(WireTensor, WireTensor), WireError> {
    let t = &req.tensors[0];
    let neg = t.data.iter().map(|v| -v).collect();
    Ok((t.clone(), WireTensor::new(t.dims.clone(), neg).unwrap()))
}

fn random_tensor(rng: &mut ChaCha8Rng) -> WireTensor {
    let ndim = rng.random_range(1..=5);
    let dims: Vec<u32> = (0..ndim).map(|_| rng.random_range(1..6)).collect();
    let n = dims.iter().product::<u32>() as usize;
    // arbitrary bit patterns, NaNs included
    let data = (0..n).map(|_| f32::from_bits(rng.random())).collect();
    WireTensor { dims, data }
}

fn bits(t: &WireTensor) -> Vec<u32> {
    t.data.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn tensors_survive_the_round_trip_bit_exactly() {
    let client = loopback(echo);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..100 {
        let t = random_tensor(&mut rng);
        let req = WireRequest { t: rng.random_range(0..1000), cond: format!("prompt {i} ✓"), tensors: vec![t.clone()] };
        match client.round_trip(req).unwrap() {
            Message::Response { eps, var } => {
                assert_eq!(eps.dims, t.dims);
                assert_eq!(bits(&eps), bits(&t));
                let neg: Vec<u32> = t.data.iter().map(|v| (-v).to_bits()).collect();
                assert_eq!(bits(&var), neg);
            }
            other => panic!("unexpected reply {other:?}"),
        }
    }
}

#[test]
fn fuzzed_frames_never_break_the_server() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let valid = encode_frame(&Message::Request(WireRequest {
        t: 500,
        cond: "x".into(),
        tensors: vec![WireTensor::new(vec![1, 3, 2, 2], vec![0.25; 12]).unwrap()],
    }));
    let mut errors = 0;
    for _ in 0..1000 {
        let mut frame = valid.clone();
        match rng.random_range(0..4) {
            0 => {
                for _ in 0..rng.random_range(1..4) {
                    let i = rng.random_range(0..frame.len());
                    frame[i] ^= 1 << rng.random_range(0..8);
                }
            }
            1 => frame.truncate(rng.random_range(0..frame.len())),
            2 => {
                let i = rng.random_range(HEADER_LEN..frame.len());
                frame[i] = rng.random();
            }
            _ => frame = (0..rng.random_range(1..80)).map(|_| rng.random()).collect(),
        }
        let mut out = Vec::new();
        serve(Cursor::new(frame.clone()), &mut out, &mut echo).unwrap();
        let still_valid =
            matches!(read_message(&mut Cursor::new(&frame)), Ok(Incoming::Message(Message::Request(_))));
        let mut replies = Cursor::new(out);
        let mut n = 0;
        loop {
            match read_message(&mut replies).unwrap() {
                Incoming::Eof => break,
                Incoming::Message(Message::Error { code, .. }) => {
                    assert!((codes::MALFORMED..=codes::MODEL).contains(&code));
                    assert!(n > 0 || !still_valid);
                    errors += 1;
                }
                Incoming::Message(Message::Response { .. }) => assert!(n > 0 || still_valid),
                other => panic!("server sent {other:?}"),
            }
            n += 1;
        }
        // a damaged length field can split the bytes into several frames
        assert_eq!(n == 0, frame.is_empty());
    }
    assert!(errors > 500, "only {errors} error replies");
}

#[test]
fn decoder_rejects_trailing_and_oversized_payloads() {
    let t = WireTensor::new(vec![2], vec![1.0, 2.0]).unwrap();
    let frame = encode_frame(&Message::Response { eps: t.clone(), var: t });
    let mut payload = frame[HEADER_LEN..].to_vec();
    assert!(matches!(decode_payload(2, &payload), Ok(Message::Response { .. })));
    payload.push(0);
    assert_eq!(decode_payload(2, &payload).unwrap_err().code, codes::MALFORMED);
    assert_eq!(decode_payload(9, &payload).unwrap_err().code, codes::MESSAGE_TYPE);

    let mut huge = frame.clone();
    huge[12..20].copy_from_slice(&(u64::MAX).to_le_bytes());
    assert!(matches!(read_message(&mut Cursor::new(huge)).unwrap(), Incoming::Fatal(_)));
    let mut wrong_version = frame;
    wrong_version[4] = 7;
    match read_message(&mut Cursor::new(wrong_version)).unwrap() {
        Incoming::Rejected(e) => assert_eq!(e.code, codes::VERSION),
        other => panic!("{other:?}"),
    }
}

/// Serves an in-process endpoint over the wire, as a model server would.
fn bridge(endpoint: OracleDenoiser) -> impl FnMut(&WireRequest) -> Result<(WireTensor, WireTensor), WireError> {
    move |req| {
        let t = req.tensors[0].clone();
        let dims = t.dims.clone();
        let latents = unpack_sequence(t, &dims).map_err(|e| WireError::new(codes::SHAPE, e.to_string()))?;
        let pred = endpoint
            .predict(&PredictRequest { latents: &latents, cond: &req.cond, t: req.t as usize, origin: SequenceOrigin::Single })
            .map_err(|e| WireError::new(codes::MODEL, e.to_string()))?;
        Ok((pack_sequence(&pred.eps).unwrap(), pack_sequence(&pred.var).unwrap()))
    }
}

#[test]
fn remote_inpainting_matches_in_process() {
    let (w, h, n) = (12, 8, 3);
    let truth: Vec<FrameBuffer> = (0..n)
        .map(|s| FrameBuffer::new(w, h, 3, (0..w * h * 3).map(|i| ((i * 7 + s * 3) % 23) as f32 / 22.0).collect()).unwrap())
        .collect();
    let mut mask = DisocclusionMask::full(w, h);
    for y in 2..6 {
        for x in 8..12 {
            mask.set(x, y, false);
        }
    }
    let masks = vec![mask; n];
    let sched = make_schedule(&ScheduleConfig { total_steps: 200, denoise_steps: 10, resample_hi: 3, resample_lo: 2, ..Default::default() }).unwrap();
    let refs: Vec<&FrameBuffer> = truth.iter().collect();
    let oracle = OracleDenoiser::for_sequence(IdentityCodec.encode(&refs).unwrap(), sched.clone());
    let remote = loopback(bridge(oracle.clone()));
    let mr: Vec<_> = masks.iter().collect();
    let opts = InpaintOptions { seed: 9, ..Default::default() };
    let (local, _) = inpaint_sequence(&refs, &mr, "c", &IdentityCodec, &oracle, &sched, &opts).unwrap();
    let (wire, _) = inpaint_sequence(&refs, &mr, "c", &IdentityCodec, &remote, &sched, &opts).unwrap();
    assert_eq!(local, wire);
}

#[test]
fn remote_errors_and_bad_shapes_surface() {
    let failing = loopback(|_: &WireRequest| -> Result<(WireTensor, WireTensor), WireError> {
        Err(WireError::new(codes::MODEL, "no GPU"))
    });
    let z = IdentityCodec.encode(&[&FrameBuffer::zeros(2, 2, 3)]).unwrap();
    let req = PredictRequest { latents: &z, cond: "", t: 10, origin: SequenceOrigin::Single };
    match failing.predict(&req) {
        Err(Error::Remote { code, message }) => assert_eq!((code, message.as_str()), (codes::MODEL, "no GPU")),
        other => panic!("{other:?}"),
    }
    let shrinking = loopback(|req: &WireRequest| -> Result<(WireTensor, WireTensor), WireError> {
        let mut dims = req.tensors[0].dims.clone();
        dims[3] = 1;
        Ok((WireTensor::zeros(dims.clone()), WireTensor::zeros(dims)))
    });
    // the server itself refuses to send mismatched shapes
    assert!(matches!(shrinking.predict(&req), Err(Error::Remote { code: codes::MODEL, .. })));
    assert!(ExternalDenoiser::connect("127.0.0.1:1").is_err());
}
