import type { Meta, TransferParams } from './types.js';

/** View model for the parameter form, prefilled from /meta. */
export interface ControlsModel {
  alpha: { min: number; max: number; step: number; value: number };
  attnLayers: { options: number[]; selected: number[] };
  residualLayers: { options: number[]; selected: number[] };
  steps: { min: number; value: number };
  cfgScale: { min: number; value: number };
  order: { options: string[]; value: string };
  editPrompt: string;
  contentPrompt: string;
}

export function buildControls(meta: Meta): ControlsModel {
  return {
    alpha: {
      min: meta.alpha_range[0],
      max: meta.alpha_range[1],
      step: 0.05,
      value: meta.defaults.alpha,
    },
    attnLayers: {
      options: [...meta.layers.decoder],
      selected: [...meta.defaults.attn_layers],
    },
    residualLayers: {
      options: [...meta.layers.decoder],
      selected: [...meta.defaults.residual_layers],
    },
    steps: { min: 1, value: meta.defaults.steps },
    cfgScale: { min: 0, value: meta.defaults.cfg_scale },
    order: { options: ['content_first', 'style_first'], value: meta.defaults.order },
    editPrompt: '',
    contentPrompt: '',
  };
}

export function controlsToParams(model: ControlsModel, seed = 0): TransferParams {
  return {
    alpha: model.alpha.value,
    attnLayers: [...model.attnLayers.selected],
    residualLayers: [...model.residualLayers.selected],
    steps: model.steps.value,
    cfgScale: model.cfgScale.value,
    order: model.order.value as TransferParams['order'],
    contentPrompt: model.contentPrompt,
    editPrompt: model.editPrompt === '' ? null : model.editPrompt,
    seed,
  };
}

/** Client-side guard: never submit params the /meta contract rejects. */
export function validateParams(params: TransferParams, meta: Meta): string[] {
  const errors: string[] = [];
  const [lo, hi] = meta.alpha_range;
  if (!(params.alpha >= lo && params.alpha <= hi)) {
    errors.push(`alpha ${params.alpha} outside [${lo}, ${hi}]`);
  }
  const decoder = new Set(meta.layers.decoder);
  for (const l of params.attnLayers) {
    if (!decoder.has(l)) errors.push(`attention layer ${l} is not a decoder layer`);
  }
  for (const l of params.residualLayers) {
    if (!decoder.has(l)) errors.push(`residual layer ${l} is not a decoder layer`);
  }
  if (!Number.isInteger(params.steps) || params.steps < 1) {
    errors.push(`steps ${params.steps} must be a positive integer`);
  }
  if (params.cfgScale < 0) errors.push(`guidance scale ${params.cfgScale} must be >= 0`);
  if (params.order !== 'content_first' && params.order !== 'style_first') {
    errors.push(`unknown order ${params.order}`);
  }
  return errors;
}
