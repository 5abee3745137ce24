/** Little-endian binary helpers and CRC32 for the CFW1/NDT1/CKV1 formats. */

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(data: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < data.length; i++) {
    c = CRC_TABLE[(c ^ data[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

export class ByteWriter {
  private chunks: Uint8Array[] = [];

  bytes(data: Uint8Array): void {
    this.chunks.push(data);
  }

  ascii(s: string): void {
    this.bytes(new TextEncoder().encode(s));
  }

  u8(v: number): void {
    this.bytes(new Uint8Array([v & 0xff]));
  }

  u16(v: number): void {
    const b = new Uint8Array(2);
    new DataView(b.buffer).setUint16(0, v, true);
    this.bytes(b);
  }

  u32(v: number): void {
    const b = new Uint8Array(4);
    new DataView(b.buffer).setUint32(0, v >>> 0, true);
    this.bytes(b);
  }

  u64(v: number): void {
    const b = new Uint8Array(8);
    new DataView(b.buffer).setBigUint64(0, BigInt(v), true);
    this.bytes(b);
  }

  f32Array(arr: Float32Array | Float64Array): void {
    const out = new Uint8Array(arr.length * 4);
    const view = new DataView(out.buffer);
    for (let i = 0; i < arr.length; i++) {
      view.setFloat32(i * 4, arr[i], true);
    }
    this.bytes(out);
  }

  finish(): Uint8Array {
    const total = this.chunks.reduce((n, c) => n + c.length, 0);
    const out = new Uint8Array(total);
    let pos = 0;
    for (const c of this.chunks) {
      out.set(c, pos);
      pos += c.length;
    }
    return out;
  }
}

export class ByteReader {
  pos = 0;
  private view: DataView;

  constructor(public data: Uint8Array) {
    this.view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  }

  remaining(): number {
    return this.data.length - this.pos;
  }

  private need(n: number): void {
    if (this.pos + n > this.data.length) {
      throw new Error("file truncated");
    }
  }

  ascii(n: number): string {
    this.need(n);
    const s = new TextDecoder().decode(this.data.subarray(this.pos, this.pos + n));
    this.pos += n;
    return s;
  }

  u8(): number {
    this.need(1);
    return this.data[this.pos++];
  }

  u16(): number {
    this.need(2);
    const v = this.view.getUint16(this.pos, true);
    this.pos += 2;
    return v;
  }

  u32(): number {
    this.need(4);
    const v = this.view.getUint32(this.pos, true);
    this.pos += 4;
    return v;
  }

  u64(): number {
    this.need(8);
    const v = this.view.getBigUint64(this.pos, true);
    this.pos += 8;
    if (v > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new Error("64-bit value too large");
    }
    return Number(v);
  }

  f32Array(n: number): Float32Array {
    this.need(4 * n);
    const out = new Float32Array(n);
    for (let i = 0; i < n; i++) {
      out[i] = this.view.getFloat32(this.pos + i * 4, true);
    }
    this.pos += 4 * n;
    return out;
  }
}
