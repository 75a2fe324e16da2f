use std::collections::HashSet;
use std::net::Ipv4Addr;
use std::process::Command;
use std::sync::RwLock;
use std::time::{SystemTime, UNIX_EPOCH};

use super::RespondError;

pub const DEFAULT_BLOCK_TEMPLATE: &str = "iptables -A INPUT -s {ip} -j DROP";

/// Microseconds since the Unix epoch.
pub fn unix_time_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

/// Where source blocks are installed. Reads come from every mediation
/// path concurrently; writes are serialized by the implementation.
pub trait FirewallBackend: Send + Sync {
    fn block(&self, ip: Ipv4Addr) -> Result<(), RespondError>;
    fn is_blocked(&self, ip: Ipv4Addr) -> bool;
    fn blocked(&self) -> Vec<Ipv4Addr>;
}

#[derive(Debug, Default)]
pub struct MemoryBlocklist {
    set: RwLock<HashSet<Ipv4Addr>>,
}

impl MemoryBlocklist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.set.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FirewallBackend for MemoryBlocklist {
    fn block(&self, ip: Ipv4Addr) -> Result<(), RespondError> {
        self.set.write().unwrap().insert(ip);
        Ok(())
    }

    fn is_blocked(&self, ip: Ipv4Addr) -> bool {
        self.set.read().unwrap().contains(&ip)
    }

    fn blocked(&self) -> Vec<Ipv4Addr> {
        let mut v: Vec<_> = self.set.read().unwrap().iter().copied().collect();
        v.sort();
        v
    }
}

/// Runs a shell command template per block, `{ip}` substituted. Successful
/// blocks are mirrored in memory so the relay can refuse sessions without
/// querying the host firewall.
#[derive(Debug)]
pub struct CommandBackend {
    template: String,
    mirror: MemoryBlocklist,
}

impl CommandBackend {
    pub fn new(template: impl Into<String>) -> Self {
        CommandBackend {
            template: template.into(),
            mirror: MemoryBlocklist::new(),
        }
    }

    pub fn render(&self, ip: Ipv4Addr) -> String {
        self.template.replace("{ip}", &ip.to_string())
    }
}

impl FirewallBackend for CommandBackend {
    fn block(&self, ip: Ipv4Addr) -> Result<(), RespondError> {
        let cmd = self.render(ip);
        let out = Command::new("sh").arg("-c").arg(&cmd).output()?;
        if !out.status.success() {
            return Err(RespondError::Command(format!(
                "`{cmd}` exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        self.mirror.block(ip)
    }

    fn is_blocked(&self, ip: Ipv4Addr) -> bool {
        self.mirror.is_blocked(ip)
    }

    fn blocked(&self) -> Vec<Ipv4Addr> {
        self.mirror.blocked()
    }
}

/// Installs a block and returns the installation time in Unix microseconds.
pub fn block_source(ip: Ipv4Addr, backend: &dyn FirewallBackend) -> Result<u64, RespondError> {
    backend.block(ip)?;
    Ok(unix_time_us())
}
