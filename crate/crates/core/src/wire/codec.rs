use super::*;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(WireError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn descriptor(&mut self, width: DescriptorWidth) -> Result<u128, WireError> {
        let b = self.take(width.byte_len())?;
        Ok(b.iter().fold(0u128, |acc, &x| (acc << 8) | x as u128))
    }

    fn path(&mut self) -> Result<String, WireError> {
        let len = self.u16()? as usize;
        if len > MAX_PATH_LEN {
            return Err(WireError::OversizeField {
                field: "path",
                len,
                max: MAX_PATH_LEN,
            });
        }
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| WireError::Malformed("path is not UTF-8"))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn finish(&self) -> Result<(), WireError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(WireError::Malformed("trailing bytes"))
        }
    }
}

fn put_descriptor(out: &mut Vec<u8>, width: DescriptorWidth, v: u128) {
    out.extend_from_slice(&v.to_be_bytes()[16 - width.byte_len()..]);
}

fn put_path(out: &mut Vec<u8>, path: &str) {
    out.extend_from_slice(&(path.len() as u16).to_be_bytes());
    out.extend_from_slice(path.as_bytes());
}

/// Serialises a packet. Fails if the packet violates a type invariant or a
/// configured size limit.
pub fn encode_packet(p: &Packet, cfg: &WireConfig) -> Result<Vec<u8>, WireError> {
    p.validate(cfg)?;
    let w = p.header.width;
    let mut out = Vec::with_capacity(HEADER_LEN + 16 + 8 + cfg.max_payload);
    out.push((VERSION << 4) | p.packet_type() as u8);
    out.push(p.header.flags_byte());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&p.header.session_id.to_be_bytes());

    match &p.body {
        Body::Request(r) => {
            out.push(match r.direction {
                Direction::Get => 0,
                Direction::Put => 1,
            });
            put_path(&mut out, &r.path);
        }
        Body::Metadata(m) => {
            // An unbounded stream is written as all-ones at the declared width.
            put_descriptor(&mut out, w, m.transfer_size.min(w.max_value()));
            out.extend_from_slice(&m.digest);
            put_path(&mut out, &m.path);
        }
        Body::Data(d) => {
            put_descriptor(&mut out, w, d.offset);
            if let Some(n) = d.solicit {
                out.extend_from_slice(&n.to_be_bytes());
            }
            out.extend_from_slice(&d.payload);
        }
        Body::Status(s) => {
            put_descriptor(&mut out, w, s.progress);
            match s.echo {
                Some(n) => {
                    out.push(1);
                    out.extend_from_slice(&n.to_be_bytes());
                }
                None => out.push(0),
            }
            out.extend_from_slice(&(s.holes.len() as u16).to_be_bytes());
            for h in &s.holes {
                put_descriptor(&mut out, w, h.start);
                put_descriptor(&mut out, w, h.end);
            }
        }
    }
    Ok(out)
}

/// Exact length [`encode_packet`] produces for `p`.
pub fn encoded_len(p: &Packet) -> usize {
    let w = p.header.width.byte_len();
    HEADER_LEN
        + match &p.body {
            Body::Request(r) => 1 + 2 + r.path.len(),
            Body::Metadata(m) => w + DIGEST_LEN + 2 + m.path.len(),
            Body::Data(d) => w + if d.solicit.is_some() { 4 } else { 0 } + d.payload.len(),
            Body::Status(s) => {
                w + 1 + if s.echo.is_some() { 4 } else { 0 } + 2 + s.holes.len() * 2 * w
            }
        }
}

/// Parses only the common header, without looking at the body.
pub fn decode_header(bytes: &[u8]) -> Result<(PacketType, PacketHeader), WireError> {
    let mut r = Reader::new(bytes);
    let head = r.take(HEADER_LEN)?;
    let version = head[0] >> 4;
    if version != VERSION {
        return Err(WireError::BadVersion(version));
    }
    let ptype =
        PacketType::from_u8(head[0] & 0x0f).ok_or(WireError::UnknownType(head[0] & 0x0f))?;
    let flags = head[1];
    // head[2..4] is reserved and ignored, as are flag bits 5..=7.
    let session_id = u32::from_be_bytes([head[4], head[5], head[6], head[7]]);
    let header = PacketHeader {
        session_id,
        width: DescriptorWidth::from_code(flags),
        flags: Flags {
            streaming: flags & FLAG_STREAMING != 0,
            end_of_data: flags & FLAG_END_OF_DATA != 0,
            status_requested: flags & FLAG_STATUS_REQUESTED != 0,
        },
    };
    Ok((ptype, header))
}

/// Parses a datagram. Never reads past `bytes` and only returns packets that
/// satisfy [`Packet::validate`].
pub fn decode_packet(bytes: &[u8], cfg: &WireConfig) -> Result<Packet, WireError> {
    let (ptype, header) = decode_header(bytes)?;
    let w = header.width;
    let mut r = Reader::new(bytes);
    r.take(HEADER_LEN)?;

    let body = match ptype {
        PacketType::Request => {
            let direction = match r.u8()? {
                0 => Direction::Get,
                1 => Direction::Put,
                _ => return Err(WireError::Malformed("unknown request direction")),
            };
            let path = r.path()?;
            r.finish()?;
            Body::Request(Request { direction, path })
        }
        PacketType::Metadata => {
            let raw_size = r.descriptor(w)?;
            let transfer_size = if header.flags.streaming {
                if raw_size != w.max_value() {
                    return Err(WireError::Malformed(
                        "streaming metadata must declare an unbounded size",
                    ));
                }
                u128::MAX
            } else {
                raw_size
            };
            let mut digest = [0u8; DIGEST_LEN];
            digest.copy_from_slice(r.take(DIGEST_LEN)?);
            let path = r.path()?;
            r.finish()?;
            Body::Metadata(Metadata {
                transfer_size,
                digest,
                path,
            })
        }
        PacketType::Data => {
            let offset = r.descriptor(w)?;
            let solicit = if header.flags.status_requested {
                Some(r.u32()?)
            } else {
                None
            };
            let payload = r.rest();
            if payload.len() > cfg.max_payload {
                return Err(WireError::OversizeField {
                    field: "payload",
                    len: payload.len(),
                    max: cfg.max_payload,
                });
            }
            if !w.fits_span(offset, payload.len() as u128) {
                return Err(WireError::Malformed("data span exceeds descriptor width"));
            }
            Body::Data(Data {
                offset,
                solicit,
                payload: payload.to_vec(),
            })
        }
        PacketType::Status => {
            let progress = r.descriptor(w)?;
            let echo = match r.u8()? {
                0 => None,
                1 => Some(r.u32()?),
                _ => return Err(WireError::Malformed("bad echo marker")),
            };
            let count = r.u16()? as usize;
            if count > cfg.max_holes_per_status {
                return Err(WireError::OversizeField {
                    field: "holes",
                    len: count,
                    max: cfg.max_holes_per_status,
                });
            }
            // Bound the allocation by what the buffer can actually hold.
            if count * 2 * w.byte_len() > bytes.len() - r.pos {
                return Err(WireError::Truncated);
            }
            let mut holes = Vec::with_capacity(count);
            for _ in 0..count {
                let start = r.descriptor(w)?;
                let end = r.descriptor(w)?;
                if start >= end {
                    return Err(WireError::MalformedHoles);
                }
                holes.push(ByteRange { start, end });
            }
            r.finish()?;
            check_holes(&holes, w)?;
            Body::Status(Status {
                progress,
                echo,
                holes,
            })
        }
    };
    Ok(Packet { header, body })
}
