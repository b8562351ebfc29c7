import { describe, expect, it } from 'vitest'

import { decodeUlmf, encodeUlmf, UlmfFormatError } from '../src/ulmf'

function matrix(t: number, d: number, fill: (i: number, j: number) => number) {
  const frames: Float32Array[] = []
  for (let i = 0; i < t; i++) {
    const frame = new Float32Array(d)
    for (let j = 0; j < d; j++) frame[j] = Math.fround(fill(i, j))
    frames.push(frame)
  }
  return { frames, frameRate: 50, sourceTag: 'test:layer1' }
}

describe('ULMF codec', () => {
  it('round-trips frames, rate, and tag', () => {
    const m = matrix(7, 3, (i, j) => Math.sin(i * 3 + j))
    const decoded = decodeUlmf(encodeUlmf(m))
    expect(decoded.frameRate).toBe(50)
    expect(decoded.sourceTag).toBe('test:layer1')
    expect(decoded.frames.length).toBe(7)
    for (let i = 0; i < 7; i++) {
      expect(Array.from(decoded.frames[i])).toEqual(Array.from(m.frames[i]))
    }
  })

  it('lays out the header exactly per the format definition', () => {
    const blob = encodeUlmf(matrix(2, 3, () => 0.5))
    expect(blob.toString('ascii', 0, 4)).toBe('ULMF')
    expect(blob.readUInt32LE(4)).toBe(1) // version
    expect(blob.readUInt32LE(8)).toBe(2) // T
    expect(blob.readUInt32LE(12)).toBe(3) // D
    expect(blob.readFloatLE(16)).toBe(50)
    const tagLen = blob.readUInt32LE(20)
    expect(blob.toString('utf-8', 24, 24 + tagLen)).toBe('test:layer1')
    expect(blob.length).toBe(24 + tagLen + 4 * 2 * 3)
    expect(blob.readFloatLE(24 + tagLen)).toBe(0.5)
  })

  it('rejects bad magic and truncation', () => {
    const blob = encodeUlmf(matrix(2, 2, () => 1))
    const bad = Buffer.from(blob)
    bad.write('NOPE', 0, 'ascii')
    expect(() => decodeUlmf(bad)).toThrow('bad magic')
    expect(() => decodeUlmf(blob.subarray(0, blob.length - 4)))
      .toThrow(UlmfFormatError)
    expect(() => decodeUlmf(blob.subarray(0, blob.length - 4)))
      .toThrow('truncated payload')
  })

  it('rejects ragged frames', () => {
    const frames = [new Float32Array(2), new Float32Array(3)]
    expect(() => encodeUlmf({ frames, frameRate: 50, sourceTag: '' }))
      .toThrow('ragged frames')
  })
})
