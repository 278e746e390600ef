import { execFileSync } from 'node:child_process'
import { createHash } from 'node:crypto'
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from 'node:fs'
import { tmpdir } from 'node:os'
import { join } from 'node:path'
import { describe, expect, it } from 'vitest'

import {
  CoreError,
  buildEpochPlan,
  coreVersion,
  evaluateRetrieval,
  rejectionProb,
  type EmbeddingSet,
} from '../src/index.js'

const PYTHON = process.env.VIEWLIFT_PYTHON ?? 'python3'

function cli(args: string[]): string {
  return execFileSync(PYTHON, ['-m', 'viewlift.cli', ...args], { encoding: 'utf8' })
}

function sha256(text: string): string {
  return createHash('sha256').update(text).digest('hex')
}

function fixtureManifest(): string {
  const lines: string[] = []
  for (let i = 0; i < 4; i++) {
    const identity = `id${String(i).padStart(3, '0')}`
    for (let r = 0; r < 4; r++) {
      lines.push(JSON.stringify({
        identity, image: `${identity}_r${r}.png`, domain: 'real', view: 'ground',
        delta_theta: 0.0, delta_phi: 0.0,
      }))
    }
    for (let s = 0; s < 8; s++) {
      lines.push(JSON.stringify({
        identity, image: `${identity}_s${s}.png`, domain: 'synthetic', view: 'aerial',
        delta_theta: Math.round((30.0 * (s + 1)) / 8 * 100) / 100, delta_phi: 0.0,
      }))
    }
  }
  return lines.join('\n') + '\n'
}

const PLAN_OPTIONS = {
  sampler: {
    identitiesPerBatch: 2,
    instancesPerIdentity: 4,
    realPerIdentity: 2,
    syntheticPerIdentity: 2,
  },
  seed: 5,
}

describe('coreVersion', () => {
  it('matches the core CLI and is a semantic version', () => {
    const version = coreVersion()
    expect(version).toMatch(/^\d+\.\d+\.\d+$/)
    expect(version).toBe(cli(['--version']).trim())
  })
})

describe('rejectionProb', () => {
  it('reproduces the mid-curriculum value bit-for-bit', () => {
    expect(rejectionProb(15, 10)).toBe(0.25)
    const raw = cli(['reject-prob', '--delta-theta', '15', '--epoch', '10']).trim()
    expect(rejectionProb(15, 10)).toBe(Number(raw))
  })

  it('is zero for near-source views and after warmup', () => {
    expect(rejectionProb(0, 0)).toBe(0.0)
    expect(rejectionProb(30, 20)).toBe(0.0)
  })

  it('honors a custom curriculum config', () => {
    // warmup 10, max 60: (1 - 5/10) * 30/60 = 0.25
    expect(rejectionProb(30, 5, { warmupEpochs: 10, deltaThetaMax: 60 })).toBe(0.25)
  })

  it('surfaces the core validation error for out-of-range shifts', () => {
    try {
      rejectionProb(35, 0)
      expect.unreachable('should have thrown')
    } catch (error) {
      expect(error).toBeInstanceOf(CoreError)
      expect((error as CoreError).category).toBe('ValidationError')
    }
  })
})

describe('buildEpochPlan', () => {
  it('is byte-identical to the plan CLI on the shared fixture', () => {
    const manifest = fixtureManifest()
    const bound = buildEpochPlan(manifest, PLAN_OPTIONS, 0)

    const dir = mkdtempSync(join(tmpdir(), 'viewlift-parity-'))
    try {
      const manifestPath = join(dir, 'manifest.jsonl')
      const configPath = join(dir, 'config.ini')
      writeFileSync(manifestPath, manifest)
      writeFileSync(configPath, [
        '[sampler]',
        'identities_per_batch = 2',
        'instances_per_identity = 4',
        'real_per_identity = 2',
        'synthetic_per_identity = 2',
        '[pipeline]',
        'seed = 5',
        '',
      ].join('\n'))
      cli(['plan', '--config', configPath, '--manifest', manifestPath,
           '--epoch', '0', '--out', join(dir, 'plan.jsonl'),
           '--state-out', join(dir, 'state.json')])
      const cliPlan = readFileSync(join(dir, 'plan.jsonl'), 'utf8')
      const cliState = readFileSync(join(dir, 'state.json'), 'utf8')
      expect(sha256(bound.planJsonl)).toBe(sha256(cliPlan))
      expect(sha256(bound.stateJson)).toBe(sha256(cliState))
    } finally {
      rmSync(dir, { recursive: true, force: true })
    }
  })

  it('is deterministic across repeated calls', () => {
    const manifest = fixtureManifest()
    const a = buildEpochPlan(manifest, PLAN_OPTIONS, 3)
    const b = buildEpochPlan(manifest, PLAN_OPTIONS, 3)
    expect(a.planJsonl).toBe(b.planJsonl)
    expect(a.stateJson).toBe(b.stateJson)
  })

  it('keeps interleaved sessions with distinct states independent', () => {
    const manifest = fixtureManifest()
    const a0 = buildEpochPlan(manifest, PLAN_OPTIONS, 20)
    const aloneA1 = buildEpochPlan(manifest, PLAN_OPTIONS, 21, a0.stateJson)
    // interleave a second session with its own seed and state
    const b0 = buildEpochPlan(manifest, { ...PLAN_OPTIONS, seed: 6 }, 20)
    const interleavedA1 = buildEpochPlan(manifest, PLAN_OPTIONS, 21, a0.stateJson)
    buildEpochPlan(manifest, { ...PLAN_OPTIONS, seed: 6 }, 21, b0.stateJson)
    expect(interleavedA1.planJsonl).toBe(aloneA1.planJsonl)
    expect(interleavedA1.stateJson).toBe(aloneA1.stateJson)
  })

  it('rejects an empty manifest with the core message', () => {
    try {
      buildEpochPlan('', PLAN_OPTIONS, 0)
      expect.unreachable('should have thrown')
    } catch (error) {
      expect(error).toBeInstanceOf(CoreError)
      expect((error as CoreError).category).toBe('ValidationError')
    }
  })
})

describe('evaluateRetrieval', () => {
  const query: EmbeddingSet = {
    embeddings: new Float32Array([1, 0]),
    rows: 1,
    dim: 2,
    sidecarJsonl: '{"camera":"q","identity":"a"}\n',
  }

  function gallery(vectors: number[][], identities: string[]): EmbeddingSet {
    return {
      embeddings: new Float32Array(vectors.flat()),
      rows: vectors.length,
      dim: vectors[0]!.length,
      sidecarJsonl: identities
        .map((identity) => JSON.stringify({ camera: 'g', identity }))
        .join('\n') + '\n',
    }
  }

  it('scores a rank-1-perfect fixture at mAP 1.0', () => {
    const result = JSON.parse(evaluateRetrieval(query, gallery([[1, 0], [0, 1]], ['a', 'b'])))
    expect(result.mAP).toBe(1.0)
    expect(result.rank1).toBe(1.0)
    expect(result.num_queries).toBe(1)
  })

  it('matches the core CLI byte-for-byte on the ranks-1-and-3 fixture', () => {
    const g = gallery([[1, 0], [0.9, 0.1], [0.8, 0.3], [0, 1]], ['a', 'b', 'a', 'b'])
    const bound = evaluateRetrieval(query, g)
    expect(JSON.parse(bound).mAP).toBeCloseTo(5 / 6, 12)

    const dir = mkdtempSync(join(tmpdir(), 'viewlift-eval-'))
    try {
      const header = Buffer.alloc(12)
      header.write('EMB1', 0, 'ascii')
      header.writeUInt32LE(4, 4)
      header.writeUInt32LE(2, 8)
      const payload = Buffer.alloc(32)
      const values = [1, 0, 0.9, 0.1, 0.8, 0.3, 0, 1]
      values.forEach((v, i) => payload.writeFloatLE(v, i * 4))
      writeFileSync(join(dir, 'g.emb'), Buffer.concat([header, payload]))
      writeFileSync(join(dir, 'g.jsonl'), g.sidecarJsonl)
      const qHeader = Buffer.alloc(12)
      qHeader.write('EMB1', 0, 'ascii')
      qHeader.writeUInt32LE(1, 4)
      qHeader.writeUInt32LE(2, 8)
      const qPayload = Buffer.alloc(8)
      qPayload.writeFloatLE(1, 0)
      qPayload.writeFloatLE(0, 4)
      writeFileSync(join(dir, 'q.emb'), Buffer.concat([qHeader, qPayload]))
      writeFileSync(join(dir, 'q.jsonl'), query.sidecarJsonl)
      cli(['evaluate', join(dir, 'q.emb'), join(dir, 'q.jsonl'),
           join(dir, 'g.emb'), join(dir, 'g.jsonl'), '--out', join(dir, 'r.json')])
      expect(bound).toBe(readFileSync(join(dir, 'r.json'), 'utf8'))
    } finally {
      rmSync(dir, { recursive: true, force: true })
    }
  })

  it('rejects a buffer/sidecar row mismatch before calling the core', () => {
    const bad: EmbeddingSet = { ...query, sidecarJsonl: '' }
    try {
      evaluateRetrieval(bad, gallery([[1, 0]], ['a']))
      expect.unreachable('should have thrown')
    } catch (error) {
      expect(error).toBeInstanceOf(CoreError)
      expect((error as CoreError).category).toBe('ValidationError')
    }
  })

  it('rejects a buffer length / shape mismatch', () => {
    const bad: EmbeddingSet = { ...query, embeddings: new Float32Array([1, 0, 0]) }
    expect(() => evaluateRetrieval(bad, gallery([[1, 0]], ['a']))).toThrow(CoreError)
  })
})
