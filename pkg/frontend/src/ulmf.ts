/**
 * ULMF feature-file codec. Layout (little-endian):
 *   magic "ULMF" | u32 version=1 | u32 T | u32 D | f32 frame_rate |
 *   u32 tag_len | tag UTF-8 | T*D float32 values, row-major.
 *
 * This format is the entire contract with the consuming pipeline: any
 * file this writer emits must be readable by the primary reader.
 */

export const ULMF_MAGIC = 'ULMF'
export const ULMF_VERSION = 1

export interface FeatureMatrix {
  /** frames[t] is one D-dimensional frame */
  frames: Float32Array[]
  frameRate: number
  sourceTag: string
}

export class UlmfFormatError extends Error {}

export function encodeUlmf(m: FeatureMatrix): Buffer {
  const t = m.frames.length
  if (t === 0) {
    throw new UlmfFormatError('feature matrix must have at least one frame')
  }
  const d = m.frames[0].length
  for (const frame of m.frames) {
    if (frame.length !== d) {
      throw new UlmfFormatError(`ragged frames: ${frame.length} != ${d}`)
    }
  }
  const tag = Buffer.from(m.sourceTag, 'utf-8')
  const header = Buffer.alloc(24)
  header.write(ULMF_MAGIC, 0, 'ascii')
  header.writeUInt32LE(ULMF_VERSION, 4)
  header.writeUInt32LE(t, 8)
  header.writeUInt32LE(d, 12)
  header.writeFloatLE(m.frameRate, 16)
  header.writeUInt32LE(tag.length, 20)
  const payload = Buffer.alloc(4 * t * d)
  for (let i = 0; i < t; i++) {
    for (let j = 0; j < d; j++) {
      payload.writeFloatLE(m.frames[i][j], 4 * (i * d + j))
    }
  }
  return Buffer.concat([header, tag, payload])
}

export function decodeUlmf(buffer: Buffer): FeatureMatrix {
  if (buffer.length < 4 || buffer.toString('ascii', 0, 4) !== ULMF_MAGIC) {
    throw new UlmfFormatError('bad magic')
  }
  if (buffer.length < 24) {
    throw new UlmfFormatError('truncated header')
  }
  const version = buffer.readUInt32LE(4)
  if (version !== ULMF_VERSION) {
    throw new UlmfFormatError(`version mismatch: file=${version}, expected ${ULMF_VERSION}`)
  }
  const t = buffer.readUInt32LE(8)
  const d = buffer.readUInt32LE(12)
  const frameRate = buffer.readFloatLE(16)
  const tagLen = buffer.readUInt32LE(20)
  const payloadStart = 24 + tagLen
  const payloadEnd = payloadStart + 4 * t * d
  if (buffer.length < payloadEnd) {
    throw new UlmfFormatError(`truncated payload: need ${payloadEnd} bytes, got ${buffer.length}`)
  }
  const sourceTag = buffer.toString('utf-8', 24, payloadStart)
  const frames: Float32Array[] = []
  for (let i = 0; i < t; i++) {
    const frame = new Float32Array(d)
    for (let j = 0; j < d; j++) {
      frame[j] = buffer.readFloatLE(payloadStart + 4 * (i * d + j))
    }
    frames.push(frame)
  }
  return { frames, frameRate, sourceTag }
}
