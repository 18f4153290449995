/** Wire types mirroring the stylefuse job service. */

export interface Meta {
  layers: { decoder: number[]; encoder: number[] };
  defaults: {
    alpha: number;
    attn_layers: number[];
    residual_layers: number[];
    steps: number;
    cfg_scale: number;
    order: string;
  };
  alpha_range: [number, number];
  version: string;
}

export type JobState = 'queued' | 'running' | 'done' | 'failed';

export interface JobRecord {
  id: string;
  state: JobState;
  progress: { step: number; total: number };
  params: Record<string, unknown>;
  result_path: string | null;
  error: string | null;
}

/** Parameters a user steers from the form. */
export interface TransferParams {
  alpha: number;
  attnLayers: number[];
  residualLayers: number[];
  steps: number;
  cfgScale: number;
  order: 'content_first' | 'style_first';
  contentPrompt: string;
  editPrompt: string | null;
  seed: number;
}

export interface GalleryEntry {
  jobId: string;
  state: JobState;
  progress: { step: number; total: number };
  params: TransferParams;
  resultUrl: string | null;
  error: string | null;
}

export interface UploadedAssets {
  content: Blob | null;
  style: Blob | null;
}
