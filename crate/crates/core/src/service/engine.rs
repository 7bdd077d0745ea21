//! Transport-independent session engine behind the server.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::config::SessionConfig;
use crate::error::{Error, Result};
use crate::matching::{correspondence_to_flow, PreparedReference};
use crate::tensor_io::{flow_to_tensors, Tensor};
use crate::transfer::{adain_masked, inject_objects};
use crate::types::{CorrespondenceMap, FeatureMap, FlowMap, ObjectMask};

use super::protocol::{Request, Response};

struct CachedReference {
    features: FeatureMap,
    prepared: PreparedReference,
}

struct Readout {
    corr: CorrespondenceMap,
    ref_width: usize,
}

/// One client's state: configuration, reference cache keyed by
/// `(object, t, layer)`, and correspondences recorded at the readout step.
pub struct Session {
    config: SessionConfig,
    references: HashMap<(u32, u32, u32), CachedReference>,
    readouts: HashMap<u32, Readout>,
}

impl Session {
    fn new(config: SessionConfig) -> Self {
        Self {
            config,
            references: HashMap::new(),
            readouts: HashMap::new(),
        }
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn put_reference(
        &mut self,
        object: u32,
        t: u32,
        layer: u32,
        reference: FeatureMap,
        m_ref: &ObjectMask,
    ) -> Result<()> {
        let prepared = PreparedReference::new(&reference, m_ref, self.config.epsilon)?;
        self.references.insert(
            (object, t, layer),
            CachedReference {
                features: reference,
                prepared,
            },
        );
        Ok(())
    }

    /// Per-step transfer against the cached references. Inactive steps echo
    /// the target.
    pub fn rearrange(
        &mut self,
        t: u32,
        layer: u32,
        target: &FeatureMap,
        target_masks: &[ObjectMask],
    ) -> Result<FeatureMap> {
        if !self.config.injection_active(t, layer) {
            return Ok(target.clone());
        }
        let objects = target_masks
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let key = (i as u32, t, layer);
                let cached = self.references.get(&key).ok_or(Error::MissingReference {
                    object: key.0,
                    t,
                    layer,
                })?;
                Ok((&cached.prepared, &cached.features, m))
            })
            .collect::<Result<Vec<_>>>()?;
        let ref_widths: Vec<usize> = objects.iter().map(|o| o.1.width()).collect();
        let (out, corrs) = inject_objects(target, &objects)?;
        if self.config.is_readout(t, layer) {
            for (i, (corr, ref_width)) in corrs.into_iter().zip(ref_widths).enumerate() {
                self.readouts.insert(i as u32, Readout { corr, ref_width });
            }
        }
        Ok(out)
    }

    /// Masked AdaIN, applied only inside the configured AdaIN window.
    pub fn adain(
        &self,
        t: u32,
        content: &FeatureMap,
        style: &FeatureMap,
        m_content: &ObjectMask,
        m_style: &ObjectMask,
    ) -> Result<FeatureMap> {
        if !self.config.adain_active(t) {
            return Ok(content.clone());
        }
        adain_masked(content, style, m_content, m_style, self.config.epsilon)
    }

    pub fn readout_flow(&self, object: u32) -> Result<FlowMap> {
        let r = self.readouts.get(&object).ok_or(Error::NoReadoutRecorded)?;
        correspondence_to_flow(&r.corr, r.ref_width)
    }

    pub fn readout_correspondence(&self, object: u32) -> Option<&CorrespondenceMap> {
        self.readouts.get(&object).map(|r| &r.corr)
    }
}

/// Registry of live sessions. Requests within a session are serialized by
/// the session's own lock; different sessions proceed concurrently.
#[derive(Default)]
pub struct Engine {
    sessions: Mutex<HashMap<u64, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn init_session(&self, config: SessionConfig) -> Result<u64> {
        config.validate()?;
        let id = self.next_id.fetch_add(1, Ordering::SeqCst) + 1;
        self.sessions
            .lock()
            .expect("session registry poisoned")
            .insert(id, Arc::new(Mutex::new(Session::new(config))));
        Ok(id)
    }

    pub fn close_session(&self, id: u64) -> Result<()> {
        self.sessions
            .lock()
            .expect("session registry poisoned")
            .remove(&id)
            .map(|_| ())
            .ok_or(Error::UnknownSession(id))
    }

    pub fn session(&self, id: u64) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .lock()
            .expect("session registry poisoned")
            .get(&id)
            .cloned()
            .ok_or(Error::UnknownSession(id))
    }

    /// Executes one decoded request and builds its response.
    pub fn handle(&self, session_id: u64, request: Request) -> Response {
        match self.dispatch(session_id, request) {
            Ok(resp) => resp,
            Err(err) => Response::from_error(&err),
        }
    }

    fn dispatch(&self, session_id: u64, request: Request) -> Result<Response> {
        if let Request::InitSession(cfg) = request {
            let id = self.init_session(cfg)?;
            return Ok(Response::Ok { session_id: id });
        }
        if let Request::CloseSession = request {
            self.close_session(session_id)?;
            return Ok(Response::Ok { session_id });
        }
        let session = self.session(session_id)?;
        let mut s = session.lock().expect("session poisoned");
        Ok(match request {
            Request::PutReference {
                object,
                t,
                layer,
                reference,
                m_ref,
            } => {
                s.put_reference(object, t, layer, reference, &m_ref)?;
                Response::Ok { session_id }
            }
            Request::Rearrange {
                t,
                layer,
                target,
                target_masks,
            } => {
                let out = s.rearrange(t, layer, &target, &target_masks)?;
                Response::Tensors(vec![Tensor::from(&out)])
            }
            Request::Adain {
                t,
                content,
                style,
                m_content,
                m_style,
            } => {
                let out = s.adain(t, &content, &style, &m_content, &m_style)?;
                Response::Tensors(vec![Tensor::from(&out)])
            }
            Request::ReadoutFlow { object } => {
                let (disp, valid) = flow_to_tensors(&s.readout_flow(object)?);
                Response::Tensors(vec![disp, valid])
            }
            Request::InitSession(_) | Request::CloseSession => unreachable!("handled above"),
        })
    }
}
