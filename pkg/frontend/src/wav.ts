/**
 * Minimal RIFF/WAVE reader for the pipeline's input contract:
 * PCM 16-bit, mono, 16 kHz. Anything else is rejected with an error
 * naming the offending field.
 */

import { readFileSync } from 'fs'

export const REQUIRED_SAMPLE_RATE = 16000

export interface WavAudio {
  /** samples normalized to [-1, 1] by dividing by 32768 */
  samples: Float64Array
  sampleRate: number
}

export class WavFormatError extends Error {}

export function decodeWav(buffer: Buffer): WavAudio {
  if (buffer.length < 12 || buffer.toString('ascii', 0, 4) !== 'RIFF') {
    throw new WavFormatError('malformed header: missing RIFF tag')
  }
  if (buffer.toString('ascii', 8, 12) !== 'WAVE') {
    throw new WavFormatError('malformed header: missing WAVE tag')
  }

  let fmt: { format: number; channels: number; sampleRate: number; bitsPerSample: number } | undefined
  let data: Buffer | undefined
  let offset = 12
  while (offset + 8 <= buffer.length) {
    const chunkId = buffer.toString('ascii', offset, offset + 4)
    const chunkSize = buffer.readUInt32LE(offset + 4)
    const body = offset + 8
    if (chunkId === 'fmt ') {
      if (body + 16 > buffer.length) {
        throw new WavFormatError('malformed header: truncated fmt chunk')
      }
      fmt = {
        format: buffer.readUInt16LE(body),
        channels: buffer.readUInt16LE(body + 2),
        sampleRate: buffer.readUInt32LE(body + 4),
        bitsPerSample: buffer.readUInt16LE(body + 14),
      }
    } else if (chunkId === 'data') {
      data = buffer.subarray(body, Math.min(body + chunkSize, buffer.length))
    }
    offset = body + chunkSize + (chunkSize % 2)
  }

  if (fmt === undefined) {
    throw new WavFormatError('malformed header: no fmt chunk')
  }
  if (data === undefined) {
    throw new WavFormatError('malformed header: no data chunk')
  }
  if (fmt.format !== 1) {
    throw new WavFormatError(`format=${fmt.format}, expected PCM (1)`)
  }
  if (fmt.channels !== 1) {
    throw new WavFormatError(`channels=${fmt.channels}, expected 1`)
  }
  if (fmt.sampleRate !== REQUIRED_SAMPLE_RATE) {
    throw new WavFormatError(`sample_rate=${fmt.sampleRate}, expected ${REQUIRED_SAMPLE_RATE}`)
  }
  if (fmt.bitsPerSample !== 16) {
    throw new WavFormatError(`bit_depth=${fmt.bitsPerSample}, expected 16`)
  }

  const n = Math.floor(data.length / 2)
  const samples = new Float64Array(n)
  for (let i = 0; i < n; i++) {
    samples[i] = data.readInt16LE(i * 2) / 32768
  }
  return { samples, sampleRate: fmt.sampleRate }
}

export function readWav(path: string): WavAudio {
  return decodeWav(readFileSync(path))
}

/** Test helper: encode mono PCM16 samples (already in [-1, 1]). */
export function encodeWav(samples: ArrayLike<number>, sampleRate = REQUIRED_SAMPLE_RATE): Buffer {
  const dataSize = samples.length * 2
  const buffer = Buffer.alloc(44 + dataSize)
  buffer.write('RIFF', 0, 'ascii')
  buffer.writeUInt32LE(36 + dataSize, 4)
  buffer.write('WAVE', 8, 'ascii')
  buffer.write('fmt ', 12, 'ascii')
  buffer.writeUInt32LE(16, 16)
  buffer.writeUInt16LE(1, 20) // PCM
  buffer.writeUInt16LE(1, 22) // mono
  buffer.writeUInt32LE(sampleRate, 24)
  buffer.writeUInt32LE(sampleRate * 2, 28)
  buffer.writeUInt16LE(2, 32)
  buffer.writeUInt16LE(16, 34)
  buffer.write('data', 36, 'ascii')
  buffer.writeUInt32LE(dataSize, 40)
  for (let i = 0; i < samples.length; i++) {
    const clamped = Math.max(-1, Math.min(1, samples[i]))
    buffer.writeInt16LE(Math.max(-32768, Math.min(32767, Math.round(clamped * 32768))), 44 + i * 2)
  }
  return buffer
}
