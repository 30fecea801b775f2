/**
 * Canvas waveform lane with drag-to-mark regions.
 *
 * Renders min/max peaks of a decoded audio buffer and lets the annotator drag
 * horizontally to create [start, end) regions. Regions merge on overlap and
 * support undo. Emits 'regions-changed' whenever the region list changes.
 */

import { normalizeRegions, Region, TimeScale } from './regions.js'

type LaneEvent = 'regions-changed'
type Listener = (regions: Region[]) => void

export interface WaveformLaneOptions {
  container: HTMLElement
  duration: number
  height?: number
  waveColor?: string
  regionColor?: string
  interactive?: boolean
}

export class WaveformLane {
  private readonly canvas: HTMLCanvasElement
  private readonly ctx: CanvasRenderingContext2D
  private readonly options: Required<WaveformLaneOptions>
  private readonly listeners = new Map<LaneEvent, Listener[]>()
  private peaks: Array<[number, number]> = []
  private regions: Region[] = []
  private history: Region[][] = []
  private dragStart: number | null = null
  private dragCurrent: number | null = null

  constructor(options: WaveformLaneOptions) {
    this.options = {
      height: 96,
      waveColor: '#4a7cba',
      regionColor: 'rgba(220, 90, 60, 0.35)',
      interactive: true,
      ...options,
    }
    this.canvas = document.createElement('canvas')
    this.canvas.width = options.container.clientWidth || 800
    this.canvas.height = this.options.height
    this.canvas.style.display = 'block'
    this.canvas.style.width = '100%'
    options.container.appendChild(this.canvas)
    const ctx = this.canvas.getContext('2d')
    if (!ctx) throw new Error('canvas 2d context unavailable')
    this.ctx = ctx
    if (this.options.interactive) this.bindPointerEvents()
    this.draw()
  }

  get scale(): TimeScale {
    return new TimeScale(this.options.duration, this.canvas.width)
  }

  on(event: LaneEvent, listener: Listener): void {
    const list = this.listeners.get(event) ?? []
    list.push(listener)
    this.listeners.set(event, list)
  }

  private emit(event: LaneEvent): void {
    for (const listener of this.listeners.get(event) ?? []) {
      listener(this.getRegions())
    }
  }

  /** Decode and render audio fetched from the service. */
  async loadAudio(bytes: ArrayBuffer, audioContext: AudioContext): Promise<void> {
    const buffer = await audioContext.decodeAudioData(bytes.slice(0))
    const samples = buffer.getChannelData(0)
    const buckets = this.canvas.width
    const per = Math.max(1, Math.floor(samples.length / buckets))
    this.peaks = []
    for (let i = 0; i < buckets; i++) {
      let lo = 0
      let hi = 0
      for (let j = i * per; j < Math.min((i + 1) * per, samples.length); j++) {
        lo = Math.min(lo, samples[j])
        hi = Math.max(hi, samples[j])
      }
      this.peaks.push([lo, hi])
    }
    this.draw()
  }

  getRegions(): Region[] {
    return this.regions.map(([s, e]) => [s, e])
  }

  setRegions(regions: Region[]): void {
    this.pushHistory()
    this.regions = normalizeRegions(regions, this.options.duration)
    this.draw()
    this.emit('regions-changed')
  }

  clearRegions(): void {
    this.setRegions([])
  }

  undo(): void {
    const previous = this.history.pop()
    if (previous) {
      this.regions = previous
      this.draw()
      this.emit('regions-changed')
    }
  }

  private pushHistory(): void {
    this.history.push(this.getRegions())
    if (this.history.length > 50) this.history.shift()
  }

  private bindPointerEvents(): void {
    this.canvas.addEventListener('pointerdown', (event) => {
      this.canvas.setPointerCapture(event.pointerId)
      this.dragStart = this.offsetX(event)
      this.dragCurrent = this.dragStart
    })
    this.canvas.addEventListener('pointermove', (event) => {
      if (this.dragStart === null) return
      this.dragCurrent = this.offsetX(event)
      this.draw()
    })
    this.canvas.addEventListener('pointerup', (event) => {
      if (this.dragStart === null) return
      const a = this.scale.pixelToTime(this.dragStart)
      const b = this.scale.pixelToTime(this.offsetX(event))
      this.dragStart = null
      this.dragCurrent = null
      const [start, end] = a < b ? [a, b] : [b, a]
      if (end - start > 1e-3) {
        this.setRegions([...this.regions, [start, end]])
      } else {
        this.draw()
      }
    })
  }

  private offsetX(event: PointerEvent): number {
    const rect = this.canvas.getBoundingClientRect()
    return ((event.clientX - rect.left) / rect.width) * this.canvas.width
  }

  private draw(): void {
    const { width, height } = this.canvas
    const mid = height / 2
    this.ctx.clearRect(0, 0, width, height)
    this.ctx.fillStyle = '#f5f6f8'
    this.ctx.fillRect(0, 0, width, height)
    this.ctx.strokeStyle = this.options.waveColor
    this.ctx.beginPath()
    if (this.peaks.length === 0) {
      this.ctx.moveTo(0, mid)
      this.ctx.lineTo(width, mid)
    } else {
      for (let x = 0; x < this.peaks.length; x++) {
        const [lo, hi] = this.peaks[x]
        this.ctx.moveTo(x + 0.5, mid - hi * mid)
        this.ctx.lineTo(x + 0.5, mid - lo * mid)
      }
    }
    this.ctx.stroke()
    this.ctx.fillStyle = this.options.regionColor
    for (const [start, end] of this.regions) {
      const x0 = this.scale.timeToPixel(start)
      const x1 = this.scale.timeToPixel(end)
      this.ctx.fillRect(x0, 0, x1 - x0, height)
    }
    if (this.dragStart !== null && this.dragCurrent !== null) {
      const x0 = Math.min(this.dragStart, this.dragCurrent)
      const x1 = Math.max(this.dragStart, this.dragCurrent)
      this.ctx.fillRect(x0, 0, x1 - x0, height)
    }
  }
}
