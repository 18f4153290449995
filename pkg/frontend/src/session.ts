import { ApiClient, ApiError } from './api.js';
import { validateParams } from './controls.js';
import type { GalleryEntry, JobRecord, Meta, TransferParams, UploadedAssets } from './types.js';

export type Sleep = (ms: number) => Promise<void>;
export type BlobToUrl = (blob: Blob) => string;

const defaultSleep: Sleep = (ms) => new Promise((r) => setTimeout(r, ms));

export interface TrackOptions {
  pollIntervalMs?: number;
  maxPollRetries?: number;   // consecutive network failures tolerated while polling
  sleep?: Sleep;
  blobToUrl?: BlobToUrl;
}

/** Client-local session: uploads, current params, job list, result gallery. */
export class Session {
  readonly assets: UploadedAssets = { content: null, style: null };
  params: TransferParams | null = null;
  private entries: GalleryEntry[] = [];
  private listeners: Array<() => void> = [];

  constructor(
    private readonly api: ApiClient,
    private readonly meta: Meta,
  ) {}

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  gallery(): readonly GalleryEntry[] {
    return this.entries;
  }

  setAssets(content: Blob | null, style: Blob | null): void {
    this.assets.content = content;
    this.assets.style = style;
    this.emit();
  }

  setParams(params: TransferParams): string[] {
    const errors = validateParams(params, this.meta);
    if (errors.length === 0) this.params = params;
    return errors;
  }

  private updateEntry(jobId: string, patch: Partial<GalleryEntry>): void {
    this.entries = this.entries.map((e) => {
      if (e.jobId !== jobId) return e;
      if (Object.isFrozen(e)) return e; // completed entries are immutable
      return { ...e, ...patch };
    });
    this.emit();
  }

  private freezeEntry(jobId: string): GalleryEntry {
    this.entries = this.entries.map((e) =>
      e.jobId === jobId ? Object.freeze({ ...e }) : e);
    this.emit();
    const frozen = this.entries.find((e) => e.jobId === jobId)!;
    return frozen;
  }

  /**
   * Submit the current params and follow the job to completion.  Validation
   * failures and rejected submissions surface as a failed gallery entry, not
   * an exception; transient polling failures are retried.
   */
  async submitAndTrack(options: TrackOptions = {}): Promise<GalleryEntry> {
    const sleep = options.sleep ?? defaultSleep;
    const interval = options.pollIntervalMs ?? 500;
    const maxRetries = options.maxPollRetries ?? 3;
    const blobToUrl = options.blobToUrl ?? ((b: Blob) => URL.createObjectURL(b));

    if (this.params === null) throw new Error('no parameters set');
    if (this.assets.content === null || this.assets.style === null) {
      throw new Error('content and style images must be uploaded first');
    }
    const badParams = validateParams(this.params, this.meta);
    if (badParams.length > 0) {
      throw new Error(`refusing to submit invalid params: ${badParams.join('; ')}`);
    }
    const snapshot: TransferParams = JSON.parse(JSON.stringify(this.params));

    let record: JobRecord;
    const localId = `local-${Date.now()}-${this.entries.length}`;
    this.entries = [...this.entries, {
      jobId: localId,
      state: 'queued',
      progress: { step: 0, total: snapshot.steps },
      params: snapshot,
      resultUrl: null,
      error: null,
    }];
    this.emit();
    try {
      record = await this.api.submitJob(this.assets.content, this.assets.style,
                                        snapshot);
    } catch (err) {
      const message = err instanceof ApiError ? err.message : String(err);
      this.updateEntry(localId, { state: 'failed', error: message });
      return this.freezeEntry(localId);
    }
    this.updateEntry(localId, { jobId: record.id, state: record.state });
    const jobId = record.id;

    let failures = 0;
    for (;;) {
      let current: JobRecord;
      try {
        current = await this.api.pollJob(jobId);
        failures = 0;
      } catch (err) {
        failures += 1;
        if (err instanceof ApiError && err.status === 404) {
          this.updateEntry(jobId, { state: 'failed', error: 'job disappeared' });
          return this.freezeEntry(jobId);
        }
        if (failures > maxRetries) {
          this.updateEntry(jobId, {
            state: 'failed',
            error: `lost contact while polling: ${String(err)}`,
          });
          return this.freezeEntry(jobId);
        }
        await sleep(interval);
        continue;
      }
      this.updateEntry(jobId, { state: current.state, progress: current.progress });
      if (current.state === 'failed') {
        this.updateEntry(jobId, { error: current.error ?? 'job failed' });
        return this.freezeEntry(jobId);
      }
      if (current.state === 'done') {
        try {
          const blob = await this.api.fetchResult(jobId);
          this.updateEntry(jobId, { resultUrl: blobToUrl(blob) });
        } catch (err) {
          this.updateEntry(jobId, { state: 'failed', error: String(err) });
        }
        return this.freezeEntry(jobId);
      }
      await sleep(interval);
    }
  }
}
