import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import { buildControls, controlsToParams } from '../src/controls.js';
import { Session } from '../src/session.js';
import { fakeMeta, mockService, pngBlob } from './mock_service.js';

const instantly = () => Promise.resolve();
const fakeUrl = (() => {
  let n = 0;
  return () => `blob:fake-${n++}`;
})();

function makeSession(service = mockService()) {
  const api = new ApiClient('', service.fetch);
  const session = new Session(api, fakeMeta);
  session.setAssets(pngBlob(), pngBlob());
  const model = buildControls(fakeMeta);
  model.steps.value = 10;
  expect(session.setParams(controlsToParams(model))).toHaveLength(0);
  return { session, service, model };
}

describe('submit_and_track', () => {
  it('follows the happy path to a rendered result', async () => {
    const { session, service } = makeSession();
    const entry = await session.submitAndTrack({ sleep: instantly, blobToUrl: fakeUrl });
    expect(entry.state).toBe('done');
    expect(entry.resultUrl).toMatch(/^blob:fake-/);
    expect(entry.progress).toEqual({ step: 10, total: 10 });
    expect(service.resultServed()).toBe(true);
    expect(session.gallery()).toHaveLength(1);
    expect(session.gallery()[0]).toBe(entry);
  });

  it('surfaces a 422 validation rejection inline', async () => {
    const { session } = makeSession(mockService({ reject: 'invalid params: alpha' }));
    const entry = await session.submitAndTrack({ sleep: instantly, blobToUrl: fakeUrl });
    expect(entry.state).toBe('failed');
    expect(entry.error).toContain('invalid params: alpha');
    expect(entry.resultUrl).toBeNull();
  });

  it('retries through a transient network drop while polling', async () => {
    const { session, service } = makeSession(mockService({ dropPolls: [1] }));
    const entry = await session.submitAndTrack({ sleep: instantly, blobToUrl: fakeUrl });
    expect(entry.state).toBe('done');
    expect(service.pollCount()).toBeGreaterThan(2);
  });

  it('fails after exhausting poll retries', async () => {
    const { session } = makeSession(mockService({ dropPolls: [1, 2, 3, 4, 5, 6] }));
    const entry = await session.submitAndTrack({
      sleep: instantly, blobToUrl: fakeUrl, maxPollRetries: 2,
    });
    expect(entry.state).toBe('failed');
    expect(entry.error).toMatch(/lost contact/);
  });

  it('propagates a failed job state with its error', async () => {
    const { session } = makeSession(mockService({
      pollScript: [
        { state: 'running', step: 2 },
        { state: 'failed', step: 2 },
      ],
    }));
    const entry = await session.submitAndTrack({ sleep: instantly, blobToUrl: fakeUrl });
    expect(entry.state).toBe('failed');
    expect(entry.error).toBe('boom');
  });

  it('refuses to submit params the contract rejects', async () => {
    const { session, model } = makeSession();
    model.alpha.value = 7;
    const errors = session.setParams(controlsToParams(model));
    expect(errors).not.toHaveLength(0);
    // params stay at the last valid value, so submission proceeds with those
    const entry = await session.submitAndTrack({ sleep: instantly, blobToUrl: fakeUrl });
    expect(entry.params.alpha).toBe(0.2);
  });

  it('requires uploads before tracking', async () => {
    const service = mockService();
    const api = new ApiClient('', service.fetch);
    const session = new Session(api, fakeMeta);
    const model = buildControls(fakeMeta);
    session.setParams(controlsToParams(model));
    await expect(session.submitAndTrack({ sleep: instantly, blobToUrl: fakeUrl }))
      .rejects.toThrow(/uploaded first/);
  });

  it('freezes gallery entries once completed', async () => {
    const { session } = makeSession();
    const entry = await session.submitAndTrack({ sleep: instantly, blobToUrl: fakeUrl });
    expect(Object.isFrozen(entry)).toBe(true);
    expect(() => {
      (entry as { state: string }).state = 'queued';
    }).toThrow();
    expect(session.gallery()[0].state).toBe('done');
  });

  it('notifies listeners as states change', async () => {
    const { session } = makeSession();
    const states: string[] = [];
    session.onChange(() => {
      const g = session.gallery();
      if (g.length > 0) states.push(g[0].state);
    });
    await session.submitAndTrack({ sleep: instantly, blobToUrl: fakeUrl });
    expect(states[0]).toBe('queued');
    expect(states[states.length - 1]).toBe('done');
    expect(states).toContain('running');
  });
});
