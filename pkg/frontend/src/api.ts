import type { JobRecord, Meta, TransferParams } from './types.js';

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = 'ApiError';
  }
}

/** Serialize form params into the service's JSON `params` field. */
export function paramsToRequestBody(params: TransferParams): Record<string, unknown> {
  const body: Record<string, unknown> = {
    alpha: params.alpha,
    steps: params.steps,
    cfg_scale: params.cfgScale,
    attn_layers: [...params.attnLayers].sort((a, b) => a - b).join(','),
    residual_layers: [...params.residualLayers].sort((a, b) => a - b).join(','),
    order: params.order,
    content_prompt: params.contentPrompt,
    seed: params.seed,
  };
  if (params.editPrompt !== null && params.editPrompt !== '') {
    body.edit_prompt = params.editPrompt;
  }
  return body;
}

async function errorDetail(resp: Response): Promise<string> {
  try {
    const doc = await resp.json();
    if (doc && typeof doc.detail === 'string') return doc.detail;
    return JSON.stringify(doc);
  } catch {
    return resp.statusText || `HTTP ${resp.status}`;
  }
}

/** Thin typed client over the four service endpoints. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async getMeta(): Promise<Meta> {
    const resp = await this.fetchFn(`${this.baseUrl}/meta`);
    if (!resp.ok) throw new ApiError(resp.status, await errorDetail(resp));
    return (await resp.json()) as Meta;
  }

  async submitJob(content: Blob, style: Blob, params: TransferParams): Promise<JobRecord> {
    const form = new FormData();
    form.append('content', content, 'content.png');
    form.append('style', style, 'style.png');
    form.append('params', JSON.stringify(paramsToRequestBody(params)));
    const resp = await this.fetchFn(`${this.baseUrl}/jobs`, { method: 'POST', body: form });
    if (!resp.ok) throw new ApiError(resp.status, await errorDetail(resp));
    return (await resp.json()) as JobRecord;
  }

  async pollJob(jobId: string): Promise<JobRecord> {
    const resp = await this.fetchFn(`${this.baseUrl}/jobs/${jobId}`);
    if (!resp.ok) throw new ApiError(resp.status, await errorDetail(resp));
    return (await resp.json()) as JobRecord;
  }

  async fetchResult(jobId: string): Promise<Blob> {
    const resp = await this.fetchFn(`${this.baseUrl}/jobs/${jobId}/result`);
    if (!resp.ok) throw new ApiError(resp.status, await errorDetail(resp));
    return await resp.blob();
  }
}
