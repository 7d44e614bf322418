#![allow(dead_code)]

use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::{Mutex, MutexGuard};

use sha2::{Digest, Sha256};

pub const BIN: &str = env!("CARGO_BIN_EXE_saratoga");

static NET: Mutex<()> = Mutex::new(());

/// Socket tests share the loopback interface and a CPU; run them one at a time.
pub fn serial() -> MutexGuard<'static, ()> {
    NET.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn free_port() -> u16 {
    UdpSocket::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

pub fn cmd() -> Command {
    let mut c = Command::new(BIN);
    // keep the caller's environment from leaking into flag defaults
    for (k, _) in std::env::vars() {
        if k.starts_with("SARATOGA_") {
            c.env_remove(k);
        }
    }
    c
}

pub fn spawn_recv(port: u16, extra: &[&str]) -> Child {
    cmd()
        .args([
            "recv",
            "--bind",
            "127.0.0.1",
            "--port",
            &port.to_string(),
            "--wait-ms",
            "10000",
        ])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

pub fn send(file: &Path, port: u16, extra: &[&str]) -> Output {
    cmd()
        .arg("send")
        .arg(file)
        .arg(format!("127.0.0.1:{port}"))
        .args(["--bind", "127.0.0.1"])
        .args(extra)
        .output()
        .unwrap()
}

pub fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes)
        .unwrap_or_else(|e| panic!("bad json ({e}): {}", String::from_utf8_lossy(bytes)))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Deterministic incompressible-looking bytes.
pub fn payload(len: usize, seed: u64) -> Vec<u8> {
    let mut x = seed | 1;
    (0..len)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            x as u8
        })
        .collect()
}

pub fn write_temp(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}
