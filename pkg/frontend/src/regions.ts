/**
 * Region model shared by the waveform lanes and the API client.
 *
 * A region is a half-open [start, end) interval in seconds. The server stores
 * edit masks at sample resolution; the mapping here mirrors its rounding rules
 * (start rounds down, end rounds up) so the client can predict the mask the
 * server will build from a submitted region list.
 */

export type Region = [start: number, end: number]

export interface SampleRegion {
  startSample: number
  endSample: number
}

/** Validate, sort, and merge overlapping or touching regions. */
export function normalizeRegions(regions: Region[], duration: number): Region[] {
  for (const region of regions) {
    const [start, end] = region
    if (!(start >= 0 && start < end && end <= duration + 1e-9)) {
      throw new Error(`region [${start}, ${end}) out of range [0, ${duration})`)
    }
  }
  const sorted = regions
    .map(([s, e]): Region => [s, e])
    .sort((a, b) => a[0] - b[0] || a[1] - b[1])
  const merged: Region[] = []
  for (const [start, end] of sorted) {
    const last = merged[merged.length - 1]
    if (last && start <= last[1]) {
      last[1] = Math.max(last[1], end)
    } else {
      merged.push([start, end])
    }
  }
  return merged
}

/** Seconds -> samples with the server's rounding: floor start, ceil end. */
export function regionToSamples(
  region: Region,
  sampleRate: number,
  totalLen: number,
): SampleRegion {
  const startSample = Math.floor(region[0] * sampleRate)
  const endSample = Math.min(Math.ceil(region[1] * sampleRate), totalLen)
  return { startSample, endSample }
}

/** Total number of marked samples for a normalized region list. */
export function markedSampleCount(
  regions: Region[],
  sampleRate: number,
  totalLen: number,
): number {
  let count = 0
  for (const region of normalizeRegions(regions, totalLen / sampleRate)) {
    const { startSample, endSample } = regionToSamples(region, sampleRate, totalLen)
    count += Math.max(0, endSample - startSample)
  }
  return count
}

/** Linear time<->pixel mapping for a lane of a fixed pixel width. */
export class TimeScale {
  constructor(
    public readonly duration: number,
    public readonly width: number,
  ) {
    if (duration <= 0 || width <= 0) {
      throw new Error('duration and width must be positive')
    }
  }

  timeToPixel(t: number): number {
    return (t / this.duration) * this.width
  }

  pixelToTime(x: number): number {
    const t = (x / this.width) * this.duration
    return Math.min(Math.max(t, 0), this.duration)
  }
}
