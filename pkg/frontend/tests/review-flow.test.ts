// Scripted review loop against the service contract: two inspectors flag
// the same QA, the second sees the threshold-met state, the filter removes
// that QA, and progress totals stay consistent throughout.

import { describe, expect, it } from 'vitest';

import { ReviewApi } from '../src/api.js';
import { SessionController } from '../src/controller.js';
import { FakeReviewService, makeItem } from './fake-service.js';

function makeService() {
    return new FakeReviewService(
        [makeItem('qa-01'), makeItem('qa-02'), makeItem('qa-03')],
        ['ana', 'ben', 'caz', 'dee'],
    );
}

function controllerFor(service: FakeReviewService, inspector: string) {
    return new SessionController(new ReviewApi('', service.fetch), inspector, {
        sleep: async () => {},
        retryDelayMs: 0,
    });
}

describe('review loop', () => {
    it('two inspectors flag the same QA; threshold met; filter removes it', async () => {
        const service = makeService();
        const ana = controllerFor(service, 'ana');
        const ben = controllerFor(service, 'ben');

        await ana.loadNext();
        expect(ana.snapshot().item?.qa_id).toBe('qa-01');
        ana.snapshot().form!.chooseFlag('logicality');
        await ana.submit();
        // first flag: no removal toast, auto-advanced to the next item
        expect(ana.snapshot().toast).toBeNull();
        expect(ana.snapshot().item?.qa_id).toBe('qa-02');

        await ben.loadNext();
        expect(ben.snapshot().item?.qa_id).toBe('qa-01');
        ben.snapshot().form!.chooseFlag('clarity');
        await ben.submit();
        // second distinct inspector: UI shows the queued-for-removal state
        expect(ben.snapshot().toast).toContain('qa-01 queued for removal');
        expect(ben.snapshot().toast).toContain('2 flags');

        // the subsequent filter run removes exactly that QA
        expect(service.removedQaIds()).toEqual(new Set(['qa-01']));

        // progress endpoint totals: judged + pending == total per inspector
        const progress = service.progress();
        for (const stats of Object.values(progress.inspectors)) {
            expect(stats.judged + stats.pending).toBe(stats.total);
        }
        expect(progress.inspectors.ana.judged).toBe(1);
        expect(progress.inspectors.ben.judged).toBe(1);
        expect(progress.inspectors.caz.judged).toBe(0);
    });

    it('each inspector walks every item exactly once to the done screen', async () => {
        const service = makeService();
        const ana = controllerFor(service, 'ana');
        await ana.loadNext();
        const seen: string[] = [];
        while (ana.snapshot().phase === 'reviewing') {
            seen.push(ana.snapshot().item!.qa_id);
            ana.snapshot().form!.choosePass();
            await ana.submit();
        }
        expect(seen).toEqual(['qa-01', 'qa-02', 'qa-03']);
        expect(ana.snapshot().phase).toBe('done');
        expect(ana.snapshot().progress?.inspectors.ana.judged).toBe(3);
        expect(ana.snapshot().progress?.inspectors.ana.pending).toBe(0);
    });

    it('un-flagging on revision drops the count (replacement semantics)', async () => {
        const service = makeService();
        const ana = controllerFor(service, 'ana');
        await ana.loadNext();
        ana.snapshot().form!.chooseFlag('coherence');
        await ana.submit();
        expect(service.flagCount('qa-01')).toBe(1);
        // revision: replace the earlier verdict with a pass
        service.verdicts.set('ana:qa-01', {
            inspector: 'ana', qa_id: 'qa-01', flagged: false, rule: null, note: null,
        });
        expect(service.flagCount('qa-01')).toBe(0);
        expect(service.removedQaIds().size).toBe(0);
    });

    it('retries a dropped submit without double-recording', async () => {
        const service = makeService();
        const ana = controllerFor(service, 'ana');
        await ana.loadNext();
        service.failNextSubmits = 2;
        ana.snapshot().form!.chooseFlag('logicality');
        await ana.submit();
        // retried to success; exactly one verdict stored for (ana, qa-01)
        expect(service.flagCount('qa-01')).toBe(1);
        expect(service.verdicts.size).toBe(1);
        expect(ana.snapshot().item?.qa_id).toBe('qa-02');
    });

    it('surfaces an error state when retries are exhausted', async () => {
        const service = makeService();
        const ana = controllerFor(service, 'ana');
        await ana.loadNext();
        service.failNextSubmits = 99;
        ana.snapshot().form!.choosePass();
        await ana.submit();
        expect(ana.snapshot().phase).toBe('error');
        expect(ana.snapshot().error).toContain('submit failed');
    });

    it('submit is ignored while the form is incomplete', async () => {
        const service = makeService();
        const ana = controllerFor(service, 'ana');
        await ana.loadNext();
        await ana.submit(); // no choice made yet
        expect(service.verdicts.size).toBe(0);
        expect(ana.snapshot().item?.qa_id).toBe('qa-01');
    });

    it('unknown inspector shows the error banner state', async () => {
        const service = makeService();
        const ghost = controllerFor(service, 'ghost');
        await ghost.loadNext();
        expect(ghost.snapshot().phase).toBe('error');
    });
});
