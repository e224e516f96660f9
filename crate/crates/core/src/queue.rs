//! Messages carried by the bounded inter-stage queues.
//!
//! Each queue has one producer and one consumer. A stage that fails sends
//! [`StageMsg::Abort`] downstream and returns its error; downstream stages
//! forward the abort and stop, so the first cause surfaces from the stage
//! that produced it.

use std::sync::mpsc::{Receiver, SyncSender};

use crate::error::{Error, Result};

#[derive(Debug)]
pub enum StageMsg<T> {
    Item(T),
    /// End of the current layer.
    End,
    Abort,
}

pub fn bounded<T>(capacity: usize) -> (SyncSender<StageMsg<T>>, Receiver<StageMsg<T>>) {
    std::sync::mpsc::sync_channel(capacity.max(1))
}

/// Sends an item, mapping a vanished consumer to [`Error::Aborted`].
pub(crate) fn send<T>(tx: &SyncSender<StageMsg<T>>, msg: StageMsg<T>) -> Result<()> {
    tx.send(msg).map_err(|_| Error::Aborted)
}

/// Receives the next message; a vanished producer counts as an abort.
pub(crate) fn recv<T>(rx: &Receiver<StageMsg<T>>) -> StageMsg<T> {
    rx.recv().unwrap_or(StageMsg::Abort)
}
