//! A fixed 20-request session transcript whose expected responses are built
//! from direct library calls.

use rand::Rng;
use semxfer::matching::correspondence_to_flow;
use semxfer::random;
use semxfer::service::{Client, Request, Response};
use semxfer::tensor_io::{flow_to_tensors, Tensor};
use semxfer::transfer::transfer_step_detailed;
use semxfer::{adain_masked, transfer_step, Error, FeatureMap, ObjectMask, ObjectPair, SessionConfig, StepRange};

pub struct Step {
    pub session: u64,
    pub request: Request,
    pub expected: Response,
}

fn tensors(map: &FeatureMap) -> Response {
    Response::Tensors(vec![Tensor::from(map)])
}

fn put(session: u64, object: u32, t: u32, layer: u32, reference: &FeatureMap, m_ref: &ObjectMask) -> Step {
    Step {
        session,
        request: Request::PutReference {
            object,
            t,
            layer,
            reference: reference.clone(),
            m_ref: m_ref.clone(),
        },
        expected: Response::Ok { session_id: session },
    }
}

fn rearrange(session: u64, t: u32, layer: u32, target: &FeatureMap, masks: &[ObjectMask], expected: Response) -> Step {
    Step {
        session,
        request: Request::Rearrange {
            t,
            layer,
            target: target.clone(),
            target_masks: masks.to_vec(),
        },
        expected,
    }
}

/// Steps for a server whose first session gets id 1.
pub fn transcript(seed: u64) -> Vec<Step> {
    let mut rng = random::rng(seed);
    let cfg = SessionConfig::default();
    let sid = 1;
    let (h, w, c) = (rng.gen_range(6..=12), rng.gen_range(6..=12), rng.gen_range(4..=16));
    let target = random::feature_map(&mut rng, h, w, c);
    let split = w / 2;
    let m_a = ObjectMask::from_fn(h, w, |x, y| x < split && y > 0);
    let m_b = ObjectMask::from_fn(h, w, |x, y| x >= split && y % 3 != 0);
    let mut reference = || {
        let (rh, rw) = (rng.gen_range(3..=10), rng.gen_range(3..=10));
        (
            random::feature_map(&mut rng, rh, rw, c),
            random::non_empty_mask(&mut rng, rh, rw, 0.6),
        )
    };
    let (r0, mr0) = reference();
    let (r1, mr1) = reference();
    let (r0_late, mr0_late) = reference();
    let (r0_mid, mr0_mid) = reference();
    let (r0_mid2, mr0_mid2) = reference();
    let style = random::feature_map(&mut rng, h, w, c);
    let pair = |r: &FeatureMap, m_r: &ObjectMask, m_t: &ObjectMask| {
        ObjectPair::new(r.clone(), m_r.clone(), m_t.clone()).unwrap()
    };

    let (readout_t, readout_l) = (cfg.readout_t, cfg.readout_layer);
    let both = [pair(&r0, &mr0, &m_a), pair(&r1, &mr1, &m_b)];
    let (out_readout, corrs) = transfer_step_detailed(&target, &both, &cfg, readout_t, readout_l).unwrap();
    let flow = |i: usize, width: usize| {
        let (d, v) = flow_to_tensors(&correspondence_to_flow(&corrs[i], width).unwrap());
        Response::Tensors(vec![d, v])
    };
    let out_late = transfer_step(&target, &[pair(&r0_late, &mr0_late, &m_a)], &cfg, 60, 3).unwrap();
    let out_mid = transfer_step(&target, &[pair(&r0_mid2, &mr0_mid2, &m_b)], &cfg, 60, 2).unwrap();
    let adain_on = adain_masked(&target, &style, &m_a, &m_b, cfg.epsilon).unwrap();
    let overlap = transfer_step(
        &target,
        &[pair(&r0, &mr0, &m_a), pair(&r0, &mr0, &m_a)],
        &cfg,
        readout_t,
        readout_l,
    )
    .unwrap_err();
    let bad_cfg = SessionConfig {
        inject_t_range: StepRange { lo: 200, hi: 10 },
        ..SessionConfig::default()
    };
    let bad_cfg_err = bad_cfg.validate().unwrap_err();
    let empty_ref_err =
        semxfer::PreparedReference::new(&r0, &ObjectMask::empty(r0.height(), r0.width()), cfg.epsilon).unwrap_err();
    let err = |e: &Error| Response::from_error(e);

    vec![
        Step {
            session: 0,
            request: Request::InitSession(cfg.clone()),
            expected: Response::Ok { session_id: sid },
        },
        put(sid, 0, readout_t, readout_l, &r0, &mr0),
        put(sid, 1, readout_t, readout_l, &r1, &mr1),
        put(sid, 0, 60, 3, &r0_late, &mr0_late),
        Step {
            session: sid,
            request: Request::ReadoutFlow { object: 0 },
            expected: err(&Error::NoReadoutRecorded),
        },
        rearrange(
            sid,
            readout_t,
            readout_l,
            &target,
            &[m_a.clone(), m_b.clone()],
            tensors(&out_readout),
        ),
        Step {
            session: sid,
            request: Request::ReadoutFlow { object: 0 },
            expected: flow(0, r0.width()),
        },
        Step {
            session: sid,
            request: Request::ReadoutFlow { object: 1 },
            expected: flow(1, r1.width()),
        },
        rearrange(sid, 10, 2, &target, std::slice::from_ref(&m_a), tensors(&target)),
        rearrange(sid, 60, 3, &target, std::slice::from_ref(&m_a), tensors(&out_late)),
        Step {
            session: sid,
            request: Request::Adain {
                t: 90,
                content: target.clone(),
                style: style.clone(),
                m_content: m_a.clone(),
                m_style: m_b.clone(),
            },
            expected: tensors(&adain_on),
        },
        Step {
            session: sid,
            request: Request::Adain {
                t: 50,
                content: target.clone(),
                style: style.clone(),
                m_content: m_a.clone(),
                m_style: m_b.clone(),
            },
            expected: tensors(&target),
        },
        rearrange(
            sid,
            60,
            2,
            &target,
            std::slice::from_ref(&m_a),
            err(&Error::MissingReference {
                object: 0,
                t: 60,
                layer: 2,
            }),
        ),
        put(sid, 0, 60, 2, &r0_mid, &mr0_mid),
        put(sid, 0, 60, 2, &r0_mid2, &mr0_mid2),
        rearrange(sid, 60, 2, &target, std::slice::from_ref(&m_b), tensors(&out_mid)),
        rearrange(
            sid,
            readout_t,
            readout_l,
            &target,
            &[m_a.clone(), m_a.clone()],
            err(&overlap),
        ),
        Step {
            session: 0,
            request: Request::InitSession(bad_cfg),
            expected: err(&bad_cfg_err),
        },
        Step {
            session: sid,
            request: Request::PutReference {
                object: 3,
                t: 70,
                layer: 2,
                reference: r0.clone(),
                m_ref: ObjectMask::empty(r0.height(), r0.width()),
            },
            expected: err(&empty_ref_err),
        },
        Step {
            session: sid,
            request: Request::CloseSession,
            expected: Response::Ok { session_id: sid },
        },
    ]
}

/// Plays the transcript over one connection, returning (actual, expected).
pub fn play(client: &mut Client, steps: &[Step]) -> Vec<(Response, Response)> {
    steps
        .iter()
        .map(|s| {
            (
                client.request(s.session, &s.request).expect("transport error"),
                s.expected.clone(),
            )
        })
        .collect()
}
