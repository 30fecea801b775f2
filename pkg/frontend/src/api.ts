/**
 * Typed client for the annotation service HTTP interface. All server access
 * goes through this module; the UI never touches service internals.
 */

import type { Region } from './regions.js'

export interface SessionInfo {
  session_id: string
  sample_count: number
  familiarization_count: number
}

export interface NextSample {
  done: boolean
  sample_id?: string
  index?: number
  total: number
  familiarization?: boolean
  duration_s?: number
  sample_rate?: number
  status?: string
  audio?: { mixture: string; enrollment: string; tse_output: string }
}

export interface AnnotationResult {
  sample_id: string
  regions: Region[]
  mask_regions: Array<[number, number]>
  mask_path: string
  marked_samples: number
}

export interface RefineResult {
  sample_id: string
  cached: boolean
  audio_url: string
}

export type RatingConfig = 'tse' | 'refine' | 'refine-replace'

export interface ExportRow {
  sample_id: string
  annotator_id: string
  regions: Region[] | null
  ratings: Partial<Record<RatingConfig, number>>
}

export interface SessionExport {
  session_id: string
  familiarization_count: number
  rows: ExportRow[]
  mos_mean: Partial<Record<RatingConfig, number>>
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>

export class AnnotationApi {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, init)
    if (!response.ok) {
      const body = await response.text()
      throw new Error(`${init?.method ?? 'GET'} ${path} -> ${response.status}: ${body}`)
    }
    return (await response.json()) as T
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(payload),
    })
  }

  createSession(
    annotatorId: string,
    options: { sampleIds?: string[]; sampleCount?: number; familiarizationCount?: number } = {},
  ): Promise<SessionInfo> {
    return this.post('/sessions', {
      annotator_id: annotatorId,
      sample_ids: options.sampleIds ?? null,
      sample_count: options.sampleCount ?? null,
      familiarization_count: options.familiarizationCount ?? 5,
    })
  }

  nextSample(sessionId: string): Promise<NextSample> {
    return this.request(`/sessions/${sessionId}/next`)
  }

  submitAnnotation(
    sampleId: string,
    sessionId: string,
    regions: Region[],
  ): Promise<AnnotationResult> {
    return this.post(`/samples/${sampleId}/annotation`, {
      session_id: sessionId,
      regions,
    })
  }

  refine(sampleId: string, sessionId: string): Promise<RefineResult> {
    return this.post(`/samples/${sampleId}/refine`, { session_id: sessionId })
  }

  rate(
    sampleId: string,
    sessionId: string,
    config: RatingConfig,
    mos: number,
  ): Promise<{ sample_id: string; config: string; mos: number }> {
    return this.post(`/samples/${sampleId}/rating`, {
      session_id: sessionId,
      config,
      mos,
    })
  }

  exportSession(sessionId: string): Promise<SessionExport> {
    return this.request(`/sessions/${sessionId}/export`)
  }

  audioUrl(path: string): string {
    return this.baseUrl + path
  }

  async fetchAudioBytes(path: string): Promise<ArrayBuffer> {
    const response = await this.fetchImpl(this.baseUrl + path)
    if (!response.ok) {
      throw new Error(`GET ${path} -> ${response.status}`)
    }
    return response.arrayBuffer()
  }
}
