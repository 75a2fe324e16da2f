use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::TelemetryError;

/// Link-layer source address. Peers are keyed by it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    /// Locally administered address derived from an IPv4 address. The relay
    /// sits above the socket layer and never sees the real L2 header, so it
    /// keys peers by this stand-in.
    pub fn from_ipv4(ip: Ipv4Addr) -> Self {
        let o = ip.octets();
        MacAddr([0x02, 0x00, o[0], o[1], o[2], o[3]])
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for MacAddr {
    type Err = TelemetryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split(':');
        for slot in out.iter_mut() {
            let part = parts
                .next()
                .ok_or_else(|| TelemetryError::Parse(format!("bad MAC address {s:?}")))?;
            *slot = u8::from_str_radix(part, 16)
                .map_err(|_| TelemetryError::Parse(format!("bad MAC address {s:?}")))?;
        }
        if parts.next().is_some() {
            return Err(TelemetryError::Parse(format!("bad MAC address {s:?}")));
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    Tcp,
    Udp,
}

/// L2–L4 header snapshot of one inbound packet. Payload bytes are never
/// inspected; only their count matters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketMeta {
    pub timestamp_us: u64,
    pub src_mac: MacAddr,
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub frame_len_bytes: u32,
    pub payload_len_bytes: u32,
    #[serde(default)]
    pub transport: Transport,
}

impl PacketMeta {
    pub fn validate(&self) -> Result<(), TelemetryError> {
        if self.frame_len_bytes == 0 {
            return Err(TelemetryError::Malformed(
                "frame length must be at least one byte".into(),
            ));
        }
        if self.payload_len_bytes > self.frame_len_bytes {
            return Err(TelemetryError::Malformed(format!(
                "payload length {} exceeds frame length {}",
                self.payload_len_bytes, self.frame_len_bytes
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_round_trips_through_text() {
        let mac: MacAddr = "02:00:0a:00:00:0A".parse().unwrap();
        assert_eq!(mac.0, [2, 0, 10, 0, 0, 10]);
        assert_eq!(mac.to_string(), "02:00:0a:00:00:0a");
        assert!("02:00".parse::<MacAddr>().is_err());
        assert!("02:00:0a:00:00:0a:ff".parse::<MacAddr>().is_err());
        assert!("zz:00:0a:00:00:0a".parse::<MacAddr>().is_err());
    }

    #[test]
    fn payload_larger_than_frame_is_malformed() {
        let p = PacketMeta {
            timestamp_us: 0,
            src_mac: MacAddr([0; 6]),
            src_ip: Ipv4Addr::LOCALHOST,
            src_port: 1,
            dst_port: 502,
            frame_len_bytes: 60,
            payload_len_bytes: 61,
            transport: Transport::Tcp,
        };
        assert!(matches!(p.validate(), Err(TelemetryError::Malformed(_))));
        let zero = PacketMeta {
            frame_len_bytes: 0,
            payload_len_bytes: 0,
            ..p
        };
        assert!(zero.validate().is_err());
    }
}
