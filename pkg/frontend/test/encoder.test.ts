import { describe, expect, it } from 'vitest'

import { ConvFeatureEncoder, ModelError, resolveModel } from '../src/encoder'

const encoder = () => new ConvFeatureEncoder(resolveModel('tiny-conv-v1'))

describe('ConvFeatureEncoder', () => {
  it('has the 20 ms stride geometry at the top layer', () => {
    const enc = encoder()
    expect(enc.nLayers).toBe(7)
    expect(enc.strideAfter(7)).toBe(320)
    expect(enc.frameRateAfter(7, 16000)).toBe(50)
  })

  it('produces 249 frames for 5 seconds at the top layer', () => {
    const enc = encoder()
    expect(enc.outputFrames(7, 80000)).toBe(249)
    const samples = new Float64Array(80000).map(() => 0.01)
    const frames = enc.encode(samples, 7)
    expect(frames.length).toBe(249)
    expect(frames[0].length).toBe(32)
  })

  it('intermediate layers have higher frame rates', () => {
    const enc = encoder()
    expect(enc.frameRateAfter(1, 16000)).toBe(3200)
    expect(enc.frameRateAfter(2, 16000)).toBe(1600)
    expect(enc.outputFrames(1, 80000)).toBe(15999)
  })

  it('is deterministic across instances', () => {
    const samples = new Float64Array(4000)
    for (let i = 0; i < samples.length; i++) samples[i] = Math.sin(i * 0.01) * 0.3
    const a = encoder().encode(samples, 7)
    const b = encoder().encode(samples, 7)
    expect(a.length).toBe(b.length)
    for (let i = 0; i < a.length; i++) {
      expect(Array.from(a[i])).toEqual(Array.from(b[i]))
    }
  })

  it('different models give different features', () => {
    const samples = new Float64Array(4000).fill(0.1)
    const tiny = new ConvFeatureEncoder(resolveModel('tiny-conv-v1')).encode(samples, 3)
    const base = new ConvFeatureEncoder(resolveModel('base-conv-v1')).encode(samples, 3)
    expect(base[0].length).toBe(64)
    expect(tiny[0].length).toBe(32)
  })

  it('outputs are finite and bounded by tanh', () => {
    const samples = new Float64Array(2000).map(() => Math.random() * 2 - 1)
    for (const frame of encoder().encode(samples, 7)) {
      for (const v of frame) {
        expect(Number.isFinite(v)).toBe(true)
        expect(Math.abs(v)).toBeLessThanOrEqual(1)
      }
    }
  })

  it('rejects unknown models and bad layers', () => {
    expect(() => resolveModel('hubert-base')).toThrow(ModelError)
    expect(() => resolveModel('hubert-base')).toThrow('model unavailable')
    expect(() => encoder().strideAfter(0)).toThrow('layer index 0 invalid')
    expect(() => encoder().strideAfter(8)).toThrow(ModelError)
  })

  it('rejects audio too short for the stack', () => {
    expect(() => encoder().encode(new Float64Array(5), 7)).toThrow('audio too short')
  })
})
